//! Checkpoints: a JSON header (network spec, storage type, parameter count
//! and SHA-256 of the parameter blob) next to a little-endian `f64` blob.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::netspec::NetworkSpec;
use crate::tensor::DType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub spec: NetworkSpec,
    pub dtype: DType,
    pub param_count: usize,
    /// Hex SHA-256 of the parameter blob.
    pub sha256: String,
    /// File name of the blob, relative to the header.
    pub params: String,
}

const FORMAT: &str = "sirep-checkpoint-v1";

/// Little-endian bytes of every parameter in [`Model::params_flat`] order.
pub fn params_blob(model: &Model) -> Vec<u8> {
    model.params_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Hex SHA-256 of [`params_blob`].
pub fn params_hash(model: &Model) -> String {
    hex::encode(Sha256::digest(params_blob(model)))
}

fn context(e: io::Error, what: &str, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{what} {}: {e}", path.display())))
}

/// Write `bytes` to a temporary sibling of `path`, then rename it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(context(e, "writing", path));
    }
    Ok(())
}

fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Save `model` as `<header>` (JSON) plus `<header stem>.bin`.
pub fn save_checkpoint(model: &Model, header: &Path) -> Result<CheckpointHeader> {
    let blob = params_blob(model);
    let bin = blob_path(header);
    let h = CheckpointHeader {
        format: FORMAT.into(),
        spec: model.spec().clone(),
        dtype: model.dtype(),
        param_count: model.param_count(),
        sha256: hex::encode(Sha256::digest(&blob)),
        params: bin.file_name().expect("header has a file name").to_string_lossy().into_owned(),
    };
    write_atomic(&bin, &blob)?;
    let json = serde_json::to_vec_pretty(&h).expect("checkpoint header serializes");
    write_atomic(header, &json)?;
    Ok(h)
}

/// Load a checkpoint, verifying the blob length and hash.
pub fn load_checkpoint(header: &Path) -> Result<Model> {
    let text = fs::read_to_string(header).map_err(|e| context(e, "reading", header))?;
    let h: CheckpointHeader = serde_json::from_str(&text)?;
    if h.format != FORMAT {
        return Err(Error::validation(format!("unknown checkpoint format {:?}", h.format)));
    }
    let bin = header.with_file_name(&h.params);
    let blob = fs::read(&bin).map_err(|e| context(e, "reading", &bin))?;
    let digest = hex::encode(Sha256::digest(&blob));
    if digest != h.sha256 {
        return Err(Error::validation(format!(
            "parameter blob hash {digest} does not match the header's {}",
            h.sha256
        )));
    }
    if blob.len() != h.param_count * 8 {
        return Err(Error::validation(format!(
            "parameter blob holds {} bytes, header declares {} parameters",
            blob.len(),
            h.param_count
        )));
    }
    let params: Vec<f64> =
        blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut model = Model::init(h.spec, h.dtype, 0)?;
    model.load_params_flat(&params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 4).unwrap();
        let h = save_checkpoint(&m, &path).unwrap();
        assert_eq!(h.sha256, params_hash(&m));
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupted_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = Model::init(NetworkSpec::toy(3, 6, 2), DType::F64, 4).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let bin = dir.path().join("model.bin");
        let mut blob = fs::read(&bin).unwrap();
        blob[3] ^= 1;
        fs::write(&bin, blob).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"hello").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, [std::ffi::OsString::from("out.txt")]);
        assert!(write_atomic(&dir.path().join("missing/out.txt"), b"x").is_err());
    }
}

//! Network selection shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use sirep::netspec::{build_reference_backbone, inflate, BlockSpec, InflationSpec, NetworkSpec, REFERENCE_TABLE};
use sirep::tensor::DType;
use sirep::train::{load_checkpoint, tiny_counting_network};
use sirep::{Error, Model, Result};

#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// Network: `reference` (2D backbone), `tiny` (small inflated counter)
    /// or a network spec JSON file.
    #[arg(long, default_value = "tiny")]
    pub net: String,
    /// Inflation applied to the network: `none`, `si-en`, `si-blazepose` or
    /// an inflation spec JSON file.
    #[arg(long, default_value = "none")]
    pub inflation: String,
    /// Override the input height and width (square).
    #[arg(long)]
    pub input_size: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Load parameters (and the network) from a checkpoint header instead.
    #[arg(long, conflicts_with_all = ["net", "inflation", "input_size"])]
    pub checkpoint: Option<PathBuf>,
    /// Storage precision of a freshly initialized network.
    #[arg(long, default_value = "f64", value_parser = ["f32", "f64"])]
    pub dtype: String,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("reading {}: {e}", path.display()))))
}

impl NetArgs {
    /// Resolve the network spec; `classes` replaces the head's class count.
    pub fn spec(&self, classes: Option<usize>) -> Result<NetworkSpec> {
        let mut net = match self.net.as_str() {
            "reference" => build_reference_backbone(REFERENCE_TABLE)?,
            "tiny" => tiny_counting_network(classes.unwrap_or(2))?,
            path => NetworkSpec::from_json(&read_text(Path::new(path))?)?,
        };
        if let Some(size) = self.input_size {
            net.input.height = size;
            net.input.width = size;
        }
        if let (Some(c), Some(BlockSpec::Head { num_classes, .. })) = (classes, net.blocks.last_mut()) {
            *num_classes = c;
        }
        let spec = match self.inflation.as_str() {
            "none" => return validated(net),
            "si-en" => InflationSpec::si_en(),
            "si-blazepose" => InflationSpec::si_blazepose(),
            path => InflationSpec::from_json(&read_text(Path::new(path))?)?,
        };
        validated(inflate(&net, &spec)?)
    }
}

fn validated(net: NetworkSpec) -> Result<NetworkSpec> {
    net.validate()?;
    Ok(net)
}

impl ModelArgs {
    pub fn dtype(&self) -> DType {
        if self.dtype == "f32" {
            DType::F32
        } else {
            DType::F64
        }
    }

    /// Checkpointed model, or a fresh one initialized from `seed`.
    pub fn model(&self, classes: Option<usize>, seed: u64) -> Result<Model> {
        if let Some(path) = &self.checkpoint {
            let m = load_checkpoint(path)?;
            if let Some(c) = classes.filter(|c| *c != m.classifier.out_features) {
                return Err(Error::config(format!(
                    "checkpoint outputs {} classes, {c} needed",
                    m.classifier.out_features
                )));
            }
            return Ok(m);
        }
        Model::init(self.net.spec(classes)?, self.dtype(), seed)
    }
}

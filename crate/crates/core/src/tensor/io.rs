//! Tensor container: `u64` little-endian header length, a JSON header
//! `{"dtype", "axes", "shape"}`, then the values little-endian in row-major order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Axis, DType, TensorND};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: DType,
    axes: Vec<Axis>,
    shape: Vec<usize>,
}

pub fn write_tensor<W: Write>(mut w: W, t: &TensorND) -> Result<()> {
    let header = serde_json::to_vec(&Header { dtype: t.dtype(), axes: t.axes().to_vec(), shape: t.shape().to_vec() })?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(t.len() * t.dtype().byte_width());
    for v in t.data() {
        match t.dtype() {
            DType::F32 => buf.extend_from_slice(&(*v as f32).to_le_bytes()),
            DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<TensorND> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 20 {
        return Err(Error::contract(format!("tensor header of {len} bytes")));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let count: usize = header.shape.iter().product();
    let width = header.dtype.byte_width();
    let mut raw = vec![0u8; count * width];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(width)
        .map(|b| match header.dtype {
            DType::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            DType::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
        .collect();
    TensorND::new(header.axes, header.shape, data, header.dtype)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e6f64..1e6, 0..64), f32_mode in any::<bool>()) {
            let dtype = if f32_mode { DType::F32 } else { DType::F64 };
            let n = values.len();
            let t = TensorND::new(vec![Axis::T, Axis::C], vec![n, 1], values, dtype).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(buf.len(), 8 + u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize + n * dtype.byte_width());
            prop_assert_eq!(read_tensor(buf.as_slice()).unwrap(), t);
        }
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let t = TensorND::new(vec![Axis::C], vec![3], vec![1.0, 2.0, 3.0], DType::F64).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_tensor(buf.as_slice()), Err(Error::Io(_))));
    }
}

//! Dense tensors with semantic axes and the kernel set used by the runtime.
//!
//! Storage is always `f64`; a tensor tagged [`DType::F32`] holds values that
//! are exactly representable in 32 bits, so every op rounds its outputs back
//! to the storage precision while accumulating in 64 bits.

pub(crate) mod conv;
mod frames;
pub(crate) mod head;
mod io;

pub use conv::{
    conv2d, fold_batchnorm, temporal_pointwise_conv, BatchNorm, ConvGeom, ConvWeights, Padding, SpatialPlan,
};
pub use frames::Frames;
pub use head::{classify_head, softmax, HeadKind, Linear};
pub use io::{read_tensor, write_tensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    N,
    C,
    T,
    H,
    W,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    /// Round a value to this storage precision.
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }

    pub fn round_slice(self, values: &mut [f64]) {
        if self == DType::F32 {
            for v in values {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Row-major dense array whose axes carry semantic tags.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorND {
    axes: Vec<Axis>,
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

impl TensorND {
    pub fn new(axes: Vec<Axis>, shape: Vec<usize>, mut data: Vec<f64>, dtype: DType) -> Result<Self> {
        if axes.len() != shape.len() {
            return Err(Error::contract(format!("{} axis tags for a rank-{} shape", axes.len(), shape.len())));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(Error::contract(format!("axis {a:?} tagged twice")));
            }
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::contract(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        dtype.round_slice(&mut data);
        Ok(Self { axes, shape, data, dtype })
    }

    pub fn zeros(axes: Vec<Axis>, shape: Vec<usize>, dtype: DType) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(axes, shape, vec![0.0; n], dtype)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of a tagged axis, if present.
    pub fn extent(&self, axis: Axis) -> Option<usize> {
        self.axes.iter().position(|a| *a == axis).map(|i| self.shape[i])
    }

    /// Verify that the axis tags are exactly `expected`, in order.
    pub fn expect_axes(&self, expected: &[Axis]) -> Result<()> {
        if self.axes != expected {
            return Err(Error::contract(format!("expected axes {expected:?}, got {:?}", self.axes)));
        }
        Ok(())
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let offset: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.data[offset]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Normwise relative deviation `max|a-b| / max|b|` between two equally sized
/// buffers. Returns 0 for identical buffers, including all-zero ones.
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "deviation between buffers of unequal length");
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        return 0.0;
    }
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    diff / scale.max(f64::MIN_POSITIVE)
}

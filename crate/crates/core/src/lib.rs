//! Streaming video networks built by temporally inflating 2D
//! inverted-residual backbones, with tooling for repetition counting.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod data;
pub mod error;
pub mod model;
pub mod netspec;
pub mod pose;
pub mod repcount;
pub mod stream;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{LayerStats, Model};
pub use stream::{run_offline, StreamOutput, StreamSession};

use super::{Axis, DType, TensorND};
use crate::error::{Error, Result};

/// Frame-major activation sequence: one `[C, H, W]` buffer per timestep.
///
/// This is the executor's working layout; [`TensorND`] `[C, T, H, W]` is the
/// interchange layout at API boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<f64>>,
}

impl Frames {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, frames: Vec::new() }
    }

    pub fn zeros(channels: usize, len: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, frames: vec![vec![0.0; channels * height * width]; len] }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, frame: Vec<f64>) -> Result<()> {
        if frame.len() != self.frame_len() {
            return Err(Error::contract(format!(
                "frame of {} values does not match [C={}, H={}, W={}]",
                frame.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Accept `[C, T, H, W]` or `[N=1, C, T, H, W]`.
    pub fn from_tensor(t: &TensorND) -> Result<Self> {
        let dims: Vec<usize> = match t.axes() {
            [Axis::C, Axis::T, Axis::H, Axis::W] => t.shape().to_vec(),
            [Axis::N, Axis::C, Axis::T, Axis::H, Axis::W] if t.shape()[0] == 1 => t.shape()[1..].to_vec(),
            other => {
                return Err(Error::contract(format!("clip must be tagged [C,T,H,W] (or N=1 prefixed), got {other:?}")))
            }
        };
        let (c, len, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let plane = h * w;
        let data = t.data();
        let frames = (0..len)
            .map(|ti| {
                let mut f = Vec::with_capacity(c * plane);
                for ci in 0..c {
                    let start = (ci * len + ti) * plane;
                    f.extend_from_slice(&data[start..start + plane]);
                }
                f
            })
            .collect();
        Ok(Self { channels: c, height: h, width: w, frames })
    }

    pub fn to_tensor(&self, dtype: DType) -> TensorND {
        let (c, len, plane) = (self.channels, self.len(), self.height * self.width);
        let mut data = vec![0.0; c * len * plane];
        for (ti, f) in self.frames.iter().enumerate() {
            for ci in 0..c {
                let dst = (ci * len + ti) * plane;
                data[dst..dst + plane].copy_from_slice(&f[ci * plane..(ci + 1) * plane]);
            }
        }
        TensorND::new(vec![Axis::C, Axis::T, Axis::H, Axis::W], vec![c, len, self.height, self.width], data, dtype)
            .expect("frame buffers are consistent by construction")
    }

    /// Concatenate along time. All inputs must share `[C, H, W]`.
    pub fn concat(parts: &[Frames]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::contract("nothing to concatenate"))?;
        let mut out = Frames::new(first.channels, first.height, first.width);
        for (i, p) in parts.iter().enumerate() {
            if (p.channels, p.height, p.width) != (first.channels, first.height, first.width) {
                return Err(Error::contract(format!(
                    "clip {i} has shape [C={}, H={}, W={}], expected [C={}, H={}, W={}]",
                    p.channels, p.height, p.width, first.channels, first.height, first.width
                )));
            }
            out.frames.extend(p.frames.iter().cloned());
        }
        Ok(out)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }
}

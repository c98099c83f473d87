use serde::{Deserialize, Serialize};

use super::{Frames, TensorND};
use crate::error::{Error, Result};

/// How pooled backbone features become class distributions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Average over T, H and W, one distribution per clip.
    ClipSoftmax,
    /// Average over H and W only, one distribution per output step.
    #[default]
    TemporalClassifier,
}

/// Fully connected layer. Weight layout `(out, in)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self { in_features, out_features, weight: vec![0.0; in_features * out_features], bias: vec![0.0; out_features] }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64], macs: &mut u64) -> Vec<f64> {
        assert_eq!(x.len(), self.in_features);
        let mut count = 0u64;
        let out = self
            .bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                b + row
                    .iter()
                    .zip(x)
                    .map(|(w, v)| {
                        count += 1;
                        w * v
                    })
                    .sum::<f64>()
            })
            .collect();
        *macs += count;
        out
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_features];
        for (o, g) in grad_out.iter().enumerate() {
            grad_b[o] += g;
            let row = o * self.in_features;
            for i in 0..self.in_features {
                grad_w[row + i] += g * x[i];
                grad_in[i] += g * self.weight[row + i];
            }
        }
        grad_in
    }
}

/// Numerically stable softmax. Non-finite logits are rejected.
pub fn softmax(logits: &[f64], layer: usize) -> Result<Vec<f64>> {
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(Some(layer), format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Mean over the spatial plane of every channel of one frame.
pub(crate) fn spatial_mean(frame: &[f64], channels: usize) -> Vec<f64> {
    let plane = frame.len() / channels;
    (0..channels).map(|c| frame[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64).collect()
}

/// Pool `[C, T, H, W]` features and classify them.
///
/// `layer` is the index reported if the logits turn out non-finite.
pub fn classify_head(features: &TensorND, kind: HeadKind, linear: &Linear, layer: usize) -> Result<Vec<Vec<f64>>> {
    if linear.out_features < 2 {
        return Err(Error::config("a classifier needs at least 2 classes"));
    }
    let frames = Frames::from_tensor(features)?;
    if frames.channels != linear.in_features {
        return Err(Error::contract(format!(
            "features have {} channels, classifier expects {}",
            frames.channels, linear.in_features
        )));
    }
    let pooled: Vec<Vec<f64>> = frames.frames.iter().map(|f| spatial_mean(f, frames.channels)).collect();
    let mut macs = 0;
    match kind {
        HeadKind::TemporalClassifier => pooled.iter().map(|p| softmax(&linear.forward(p, &mut macs), layer)).collect(),
        HeadKind::ClipSoftmax => {
            if pooled.is_empty() {
                return Err(Error::contract("clip head over an empty clip"));
            }
            let mut mean = vec![0.0; frames.channels];
            for p in &pooled {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= pooled.len() as f64);
            Ok(vec![softmax(&linear.forward(&mean, &mut macs), layer)?])
        }
    }
}

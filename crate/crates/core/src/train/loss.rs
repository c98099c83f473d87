use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repcount::Scheme;

/// Probability floor applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;
/// Weight of the over-represented within-repetition class.
pub const WITHIN_WEIGHT: f64 = 0.2;

/// Per-class weights of the temporal cross-entropy (weighted mean over steps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub weights: Vec<f64>,
}

impl LossSpec {
    /// Within-repetition weighted by 0.2, every other class by 1.
    pub fn for_scheme(scheme: Scheme) -> Self {
        let mut weights = vec![1.0; scheme.num_classes()];
        if let Some(w) = scheme.within_class() {
            weights[w] = WITHIN_WEIGHT;
        }
        Self { weights }
    }

    pub fn uniform(classes: usize) -> Self {
        Self { weights: vec![1.0; classes] }
    }

    /// Weights must be finite and non-negative; a zero weight silences a class.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.weights.len() != classes {
            return Err(Error::config(format!("{} class weights for a {classes}-class output", self.weights.len())));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::config(format!("class weight {w} must be finite and non-negative")));
        }
        Ok(())
    }

    /// Total weight of a label sequence; must be positive.
    fn total(&self, labels: &[usize]) -> Result<f64> {
        let total: f64 = labels.iter().map(|l| self.weights[*l]).sum();
        if !(total > 0.0) {
            return Err(Error::numeric(None, "label sequence carries zero total loss weight"));
        }
        Ok(total)
    }
}

fn check(probs: &[Vec<f64>], labels: &[usize], spec: &LossSpec) -> Result<usize> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!("{} probability steps for {} labels", probs.len(), labels.len())));
    }
    let classes = probs.first().map_or(spec.weights.len(), Vec::len);
    spec.validate(classes)?;
    for (t, (p, l)) in probs.iter().zip(labels).enumerate() {
        if p.len() != classes {
            return Err(Error::contract(format!("step {t}: {} probabilities, expected {classes}", p.len())));
        }
        if *l >= classes {
            return Err(Error::contract(format!("step {t}: label {l} outside {classes} classes")));
        }
    }
    Ok(classes)
}

/// `sum_t w(y_t) * -ln p_t[y_t] / sum_t w(y_t)`, probabilities floored at
/// [`PROB_EPS`].
pub fn weighted_temporal_cross_entropy(probs: &[Vec<f64>], labels: &[usize], spec: &LossSpec) -> Result<f64> {
    check(probs, labels, spec)?;
    let total = spec.total(labels)?;
    let mut clamped = 0;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let q = p[*l];
            if q < PROB_EPS {
                clamped += 1;
            }
            spec.weights[*l] * -q.max(PROB_EPS).ln()
        })
        .sum();
    if clamped > 0 {
        log::warn!("{clamped} steps put (near-)zero probability on the true label; clamped at {PROB_EPS}");
    }
    Ok(sum / total)
}

/// Loss and its gradient with respect to the logits behind `probs`
/// (softmax and cross-entropy fused): `(w_t / W) (p_t - onehot(y_t))`.
pub fn loss_and_logit_grad(probs: &[Vec<f64>], labels: &[usize], spec: &LossSpec) -> Result<(f64, Vec<Vec<f64>>)> {
    let loss = weighted_temporal_cross_entropy(probs, labels, spec)?;
    let total = spec.total(labels)?;
    let grads = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let scale = spec.weights[*l] / total;
            p.iter().enumerate().map(|(c, q)| scale * (q - if c == *l { 1.0 } else { 0.0 })).collect()
        })
        .collect();
    Ok((loss, grads))
}

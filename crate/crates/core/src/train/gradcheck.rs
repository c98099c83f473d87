use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backprop::{backward, forward_cached, param_ranges};
use super::loss::{loss_and_logit_grad, weighted_temporal_cross_entropy, LossSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{DType, Frames};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Samples dropped because the perturbation crossed a ReLU6 kink.
    pub skipped_kinks: usize,
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Compare the backward pass with central differences on up to `max_params`
/// randomly chosen trainable parameters. Requires an `F64` model.
pub fn gradient_check(
    model: &Model,
    clip: &Frames,
    labels: &[usize],
    spec: &LossSpec,
    eps: f64,
    max_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if model.dtype() != DType::F64 {
        return Err(Error::config("gradient checking needs an f64 model"));
    }
    let trainable = model.spec().trainable_flags();
    let cache = forward_cached(model, clip)?;
    let (_, grad_logits) = loss_and_logit_grad(&cache.probs, labels, spec)?;
    let analytic = backward(model, &cache, &grad_logits, &trainable)?.flat(model);
    let base_mask = cache.activation_mask();

    let candidates: Vec<usize> =
        param_ranges(model).into_iter().filter(|(id, _, _)| trainable[*id]).flat_map(|(_, lo, hi)| lo..hi).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, candidates.len(), max_params.min(candidates.len()));

    let params = model.params_flat();
    let mut probe = model.clone();
    let mut eval = |i: usize, delta: f64| -> Result<(f64, bool)> {
        let mut p = params.clone();
        p[i] += delta;
        probe.load_params_flat(&p)?;
        let c = forward_cached(&probe, clip)?;
        let same = c.activation_mask() == base_mask;
        Ok((weighted_temporal_cross_entropy(&c.probs, labels, spec)?, same))
    };
    let mut report = GradCheckReport { checked: 0, skipped_kinks: 0, max_relative_error: 0.0, max_absolute_error: 0.0 };
    for pick in picks {
        let i = candidates[pick];
        let (plus, ok_plus) = eval(i, eps)?;
        let (minus, ok_minus) = eval(i, -eps)?;
        if !(ok_plus && ok_minus) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        report.checked += 1;
        report.max_absolute_error = report.max_absolute_error.max(abs);
        report.max_relative_error = report.max_relative_error.max(abs / a.abs().max(numeric.abs()).max(1e-8));
    }
    Ok(report)
}

//! Training of the counting head: weighted temporal cross-entropy, a
//! hand-written backward pass, SGD, synthetic repetition videos and
//! checkpoints.

mod backprop;
mod checkpoint;
mod gradcheck;
mod loss;
mod synth;
mod trainer;

pub use backprop::{backward, forward_cached, param_ranges, ForwardCache, Gradients, Sgd};
pub use checkpoint::{load_checkpoint, params_blob, params_hash, save_checkpoint, write_atomic, CheckpointHeader};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{loss_and_logit_grad, weighted_temporal_cross_entropy, LossSpec, PROB_EPS, WITHIN_WEIGHT};
pub use synth::{
    bar_video, synthetic_dataset, tiny_counting_network, BarVideoConfig, LabeledVideo, SyntheticSplit,
    SYNTHETIC_EXERCISES, SYNTHETIC_GRID_FPS,
};
pub use trainer::{
    evaluate_counts, set_trainable_suffix, train_counting_head, video_labels, EvalReport, LogEntry, TrainConfig,
    TrainReport, VideoCount,
};

use crate::error::Result;
use crate::model::Model;
use crate::tensor::Frames;

/// One optimization step on a single (concatenated) clip; returns the loss
/// before the update. Nothing changes if any gradient is non-finite.
pub fn backward_and_step(
    model: &mut Model,
    clip: &Frames,
    labels: &[usize],
    spec: &LossSpec,
    opt: &mut Sgd,
) -> Result<f64> {
    let cache = forward_cached(model, clip)?;
    let (loss, grad_logits) = loss_and_logit_grad(&cache.probs, labels, spec)?;
    let grads = backward(model, &cache, &grad_logits, &model.spec().trainable_flags())?;
    opt.step(model, &grads)?;
    Ok(loss)
}

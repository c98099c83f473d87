use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backprop::{backward, forward_cached, Gradients, Sgd};
use super::loss::{loss_and_logit_grad, LossSpec};
use super::synth::LabeledVideo;
use crate::data::batch_concat_temporal;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::repcount::{decode_probabilities, densify, mape, FrameLabelSeq, Scheme};
use crate::tensor::Frames;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of final parameterized layers that are trained.
    pub k: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub steps: usize,
    /// Windows concatenated along time per step.
    pub batch_size: usize,
    /// Frames per training window (rounded down to whole output steps).
    pub window_frames: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Run every window of a batch from a fresh state instead of letting
    /// temporal state flow across window boundaries.
    #[serde(default)]
    pub reset_at_boundaries: bool,
    /// Class weights; defaults to the scheme's weighting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
}

impl TrainConfig {
    pub fn new(scheme: Scheme, k: usize, steps: usize, seed: u64) -> Self {
        Self {
            k,
            learning_rate: 0.02,
            momentum: 0.9,
            steps,
            batch_size: 8,
            window_frames: 64,
            seed,
            scheme,
            reset_at_boundaries: false,
            loss: None,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        self.loss.clone().unwrap_or_else(|| LossSpec::for_scheme(self.scheme))
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
}

/// Count decoded from one held-out video.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoCount {
    pub exercise: String,
    pub predicted: usize,
    pub truth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub videos: Vec<VideoCount>,
    pub mape_per_exercise: BTreeMap<String, f64>,
    /// Over all videos.
    pub mape: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub log: Vec<LogEntry>,
    pub eval: EvalReport,
}

/// Mark the last `k` parameterized layers trainable and the rest frozen.
pub fn set_trainable_suffix(model: &mut Model, k: usize) -> Result<()> {
    let n = model.layers().len();
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds the {n} parameterized layers")));
    }
    model.set_trainable((0..n).map(|i| i + k >= n).collect())
}

/// Dense labels of `video` on the model's output grid. The annotation grid
/// must run at the model's output rate and cover exactly its output steps.
pub fn video_labels(model: &Model, video: &LabeledVideo, scheme: Scheme) -> Result<FrameLabelSeq> {
    let spec = model.spec();
    let steps = spec.output_len(video.clip.len());
    let out_rate = spec.input.fps / spec.temporal_decimation() as f64;
    if (video.track.fps_grid - out_rate).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "label grid mismatch: annotations at {} steps/s, network outputs {out_rate} steps/s",
            video.track.fps_grid
        )));
    }
    if let Some(d) = video.track.duration {
        let label_steps = (d * video.track.fps_grid).round() as usize;
        if label_steps != steps {
            return Err(Error::contract(format!(
                "label grid mismatch: {label_steps} label steps for {steps} output steps ({} frames)",
                video.clip.len()
            )));
        }
    }
    densify(&video.track, scheme, steps)
}

fn slice_clip(clip: &Frames, start: usize, len: usize) -> Frames {
    Frames { frames: clip.frames[start..start + len].to_vec(), ..Frames::new(clip.channels, clip.height, clip.width) }
}

/// One step on a batch of windows; returns the loss before the update.
fn batch_step(
    model: &mut Model,
    clips: &[Frames],
    labels: &[FrameLabelSeq],
    spec: &LossSpec,
    opt: &mut Sgd,
    reset: bool,
) -> Result<f64> {
    let decimation = model.spec().temporal_decimation();
    let batch = batch_concat_temporal(clips, labels, decimation)?;
    let trainable = model.spec().trainable_flags();
    let (loss, grads) = if reset {
        let caches = clips.iter().map(|c| forward_cached(model, c)).collect::<Result<Vec<_>>>()?;
        let probs: Vec<Vec<f64>> = caches.iter().flat_map(|c| c.probs.iter().cloned()).collect();
        let (loss, grad_logits) = loss_and_logit_grad(&probs, &batch.labels.labels, spec)?;
        let mut total = Gradients::zeros_like(model);
        for (i, cache) in caches.iter().enumerate() {
            let g = &grad_logits[batch.step_bounds[i]..batch.step_bounds[i + 1]];
            total.add(&backward(model, cache, g, &trainable)?);
        }
        (loss, total)
    } else {
        let cache = forward_cached(model, &batch.clip)?;
        let (loss, grad_logits) = loss_and_logit_grad(&cache.probs, &batch.labels.labels, spec)?;
        (loss, backward(model, &cache, &grad_logits, &trainable)?)
    };
    opt.step(model, &grads)?;
    Ok(loss)
}

/// Decode counts of every video with `scheme` and report MAPE overall and
/// per exercise.
pub fn evaluate_counts(model: &Model, videos: &[LabeledVideo], scheme: Scheme) -> Result<EvalReport> {
    if scheme.num_classes() != model.classifier.out_features {
        return Err(Error::config(format!(
            "scheme {scheme} has {} classes, the network outputs {}",
            scheme.num_classes(),
            model.classifier.out_features
        )));
    }
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        let probs = model.run_offline(&v.clip, None)?;
        out.push(VideoCount {
            exercise: v.exercise.clone(),
            predicted: decode_probabilities(&probs, scheme)?.predicted_count,
            truth: v.true_count,
        });
    }
    let mut by_exercise: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for c in &out {
        let e = by_exercise.entry(&c.exercise).or_default();
        e.0.push(c.predicted);
        e.1.push(c.truth);
    }
    let mape_per_exercise =
        by_exercise.into_iter().map(|(k, (p, t))| Ok((k.to_string(), mape(&p, &t)?))).collect::<Result<_>>()?;
    let all_p: Vec<usize> = out.iter().map(|c| c.predicted).collect();
    let all_t: Vec<usize> = out.iter().map(|c| c.truth).collect();
    Ok(EvalReport { scheme, mape: mape(&all_p, &all_t)?, videos: out, mape_per_exercise })
}

/// Train the last `k` layers on random windows of `train` videos,
/// concatenated along time, then evaluate counting on `held_out`.
/// `on_step` sees every log entry as it is produced.
pub fn train_counting_head(
    model: &mut Model,
    train: &[LabeledVideo],
    held_out: &[LabeledVideo],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogEntry),
) -> Result<TrainReport> {
    if train.is_empty() && cfg.steps > 0 {
        return Err(Error::config("no training videos"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::config("learning rate must be non-negative and momentum in [0, 1)"));
    }
    let spec = cfg.loss_spec();
    spec.validate(model.classifier.out_features)?;
    set_trainable_suffix(model, cfg.k)?;
    let decimation = model.spec().temporal_decimation();
    let labels = train.iter().map(|v| video_labels(model, v, cfg.scheme)).collect::<Result<Vec<_>>>()?;
    for v in held_out {
        video_labels(model, v, cfg.scheme)?;
    }
    let window = (cfg.window_frames / decimation).max(1) * decimation;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut clips = Vec::with_capacity(cfg.batch_size);
        let mut seqs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.gen_range(0..train.len());
            let clip = &train[i].clip;
            let len = window.min(clip.len() / decimation * decimation);
            if len == 0 {
                return Err(Error::config(format!("training video {i} is shorter than one output step")));
            }
            let start = rng.gen_range(0..=(clip.len() - len) / decimation) * decimation;
            let s0 = start / decimation;
            clips.push(slice_clip(clip, start, len));
            seqs.push(FrameLabelSeq::new(cfg.scheme, labels[i].labels[s0..s0 + len / decimation].to_vec())?);
        }
        let loss = batch_step(model, &clips, &seqs, &spec, &mut opt, cfg.reset_at_boundaries)?;
        let entry = LogEntry { step, loss };
        on_step(&entry);
        log.push(entry);
    }
    Ok(TrainReport { log, eval: evaluate_counts(model, held_out, cfg.scheme)? })
}

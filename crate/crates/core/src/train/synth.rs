//! Synthetic repetition videos: a soft bar sweeping back and forth over a
//! ramped background. The sweep turning points are the annotated events, so
//! the true count of every clip is known exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::netspec::{
    inflate, Activation, BlockSpec, InflationMode, InflationSpec, InflationTarget, InputContract, IrBlock, NetworkSpec,
};
use crate::repcount::{Event, EventTrack, DEFAULT_GRID_FPS};
use crate::tensor::{Frames, HeadKind};

/// Exercises of the synthetic task: a vertical bar moving along x and a
/// horizontal bar moving along y.
pub const SYNTHETIC_EXERCISES: [&str; 2] = ["sweep-x", "sweep-y"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarVideoConfig {
    pub size: usize,
    pub fps: f64,
    /// Input frames per label step (the network's temporal decimation).
    pub decimation: usize,
    /// Candidate half-periods, in label steps; one is drawn per video.
    pub half_periods: Vec<usize>,
    /// Uniform pixel noise amplitude.
    pub noise: f64,
}

impl Default for BarVideoConfig {
    /// 16x16 RGB at 16 fps, 4 frames per step, repetitions of 8 steps.
    fn default() -> Self {
        Self { size: 16, fps: 16.0, decimation: 4, half_periods: vec![4], noise: 0.03 }
    }
}

/// A clip with its repetition annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVideo {
    pub exercise: String,
    pub clip: Frames,
    pub track: EventTrack,
    pub true_count: usize,
}

/// Generate `steps` label steps (`steps * decimation` frames) of `exercise`.
///
/// The bar rests at its start position for a lead-in of `0..H` steps, then
/// sweeps to the far end (a middle-of-repetition event) in `H` steps and back
/// (an end-of-repetition event) in another `H`, with `H` drawn from
/// `half_periods`.
pub fn bar_video(cfg: &BarVideoConfig, exercise: &str, steps: usize, seed: u64) -> Result<LabeledVideo> {
    let axis_x = match exercise {
        "sweep-x" => true,
        "sweep-y" => false,
        other => return Err(Error::config(format!("unknown synthetic exercise {other:?}"))),
    };
    if cfg.half_periods.is_empty() || cfg.half_periods.contains(&0) {
        return Err(Error::config("half-periods must be non-empty and positive"));
    }
    if cfg.size < 6 || cfg.decimation == 0 || !(cfg.fps > 0.0) {
        return Err(Error::config("synthetic video needs size >= 6, positive decimation and fps"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.half_periods[rng.gen_range(0..cfg.half_periods.len())];
    let lead_in = rng.gen_range(0..h);
    let grid = cfg.fps / cfg.decimation as f64;

    let mut events = Vec::new();
    let mut step = lead_in + h;
    let mut middle = true;
    while step < steps {
        events.push(Event {
            t: step as f64 / grid,
            kind: if middle { "middle_of_repetition" } else { "end_of_repetition" }.into(),
        });
        middle = !middle;
        step += h;
    }
    let true_count = events.iter().filter(|e| e.kind == "end_of_repetition").count();
    let track = EventTrack { exercise: exercise.into(), fps_grid: grid, duration: Some(steps as f64 / grid), events };

    let n = cfg.size;
    let background: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.25));
    let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.4..0.7));
    let ramp = rng.gen_range(0.2..0.35);
    let margin = 2.0;
    let span = (n - 1) as f64 - 2.0 * margin;
    let mut clip = Frames::new(3, n, n);
    for f in 0..steps * cfg.decimation {
        // position in [0, 1]: 0 at rest and at ends, 1 at middles
        let u = (f as f64 / cfg.decimation as f64 - lead_in as f64).max(0.0);
        let pos = 1.0 - ((u % (2.0 * h as f64)) - h as f64).abs() / h as f64;
        let center = margin + pos * span;
        let mut frame = vec![0.0; 3 * n * n];
        for y in 0..n {
            for x in 0..n {
                let (along, across) = if axis_x { (x, y) } else { (y, x) };
                let d = along as f64 - center;
                let profile = (-d * d / 2.0).exp();
                let r = ramp * along as f64 / (n - 1) as f64 + 0.05 * across as f64 / (n - 1) as f64;
                for c in 0..3 {
                    let noise = rng.gen_range(-cfg.noise..=cfg.noise);
                    frame[(c * n + y) * n + x] = (background[c] + r + color[c] * profile + noise).clamp(0.0, 1.0);
                }
            }
        }
        clip.push(frame)?;
    }
    Ok(LabeledVideo { exercise: exercise.into(), clip, track, true_count })
}

/// Training and held-out videos of both synthetic exercises, seeded per
/// video so that sets with different sizes share their common prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSplit {
    pub train_per_exercise: usize,
    pub train_steps: usize,
    pub held_out_per_exercise: usize,
    pub held_out_steps: usize,
}

impl Default for SyntheticSplit {
    fn default() -> Self {
        Self { train_per_exercise: 12, train_steps: 64, held_out_per_exercise: 10, held_out_steps: 48 }
    }
}

pub fn synthetic_dataset(
    cfg: &BarVideoConfig,
    split: &SyntheticSplit,
    seed: u64,
) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>)> {
    let make = |tag: &str, per: usize, steps: usize| -> Result<Vec<LabeledVideo>> {
        let mut out = Vec::with_capacity(per * SYNTHETIC_EXERCISES.len());
        for i in 0..per {
            for ex in SYNTHETIC_EXERCISES {
                out.push(bar_video(cfg, ex, steps, derive_seed(seed, &format!("{tag}/{ex}/{i}")))?);
            }
        }
        Ok(out)
    };
    Ok((
        make("train", split.train_per_exercise, split.train_steps)?,
        make("held-out", split.held_out_per_exercise, split.held_out_steps)?,
    ))
}

/// Small inflated counting network (under 10k parameters): 16x16 RGB input,
/// four inverted-residual blocks whose expansions carry 3-tap temporal
/// kernels with strides 1, 2, 2, 1 (4 frames per output step).
pub fn tiny_counting_network(num_classes: usize) -> Result<NetworkSpec> {
    let ir = |index, in_ch, out_ch, stride| {
        BlockSpec::InvertedResidual(IrBlock {
            index,
            expansion_ratio: 2.0,
            in_ch,
            out_ch,
            kernel: 3,
            stride,
            skip: in_ch == out_ch && stride == 1,
            activation: Activation::Relu6,
            expand_temporal: None,
            project_temporal: None,
        })
    };
    let base = NetworkSpec {
        name: "tiny-counter".into(),
        input: InputContract { channels: 3, height: 16, width: 16, fps: 16.0 },
        blocks: vec![
            BlockSpec::Stem { out_ch: 8, kernel: 3, stride: 2 },
            ir(0, 8, 8, 1),
            ir(1, 8, 16, 2),
            ir(2, 16, 16, 1),
            ir(3, 16, 16, 1),
            BlockSpec::Head { conv_ch: 32, classifier: HeadKind::TemporalClassifier, num_classes, temporal: None },
        ],
        trainable: Vec::new(),
    };
    let targets = [(0, 1), (1, 2), (2, 2), (3, 1)]
        .into_iter()
        .map(|(block_index, temporal_stride)| InflationTarget { block_index, temporal_kernel: 3, temporal_stride })
        .collect();
    inflate(&base, &InflationSpec { mode: InflationMode::ByBlockIndex { targets }, ..InflationSpec::empty() })
}

/// Default grid rate of the synthetic task, matching the annotation grid.
pub const SYNTHETIC_GRID_FPS: f64 = DEFAULT_GRID_FPS;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Subcommand};
use serde::Serialize;
use serde_json::json;
use sirep::cost::per_second_cost;
use sirep::data::{
    derive_seed, load_and_validate_manifest, parse_manifest, sample_fewshot, ManifestPolicy, Split, SplitManifest,
    Taxonomy,
};
use sirep::pose::{
    build_adjacency, build_layout, camera_motion_augment, crop_pose_window, map_to_openpose, read_pose_jsonl,
    write_pose_jsonl, BlazePose33, CameraMotion, OpenPose18, PoseLayout, PoseSequence, SkeletonLayout, POSE_FPS,
    POSE_WINDOW,
};
use sirep::repcount::{
    argmax, decode_labels, decode_probabilities, densify, mape, CountDecoder, EventTrack, FrameLabelSeq, Scheme,
};
use sirep::train::{
    evaluate_counts, params_hash, save_checkpoint, synthetic_dataset, train_counting_head, write_atomic,
    BarVideoConfig, LabeledVideo, SyntheticSplit, TrainConfig,
};
use sirep::{Error, Model, Result, StreamSession};

use crate::input::{clip_to_input, frame_to_input, read_all, read_image_dir, FrameStream};
use crate::net::{ModelArgs, NetArgs};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("reading {}: {e}", path.display()))))
}

/// One JSON document per line on stdout.
fn emit(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    let n: u8 = s.parse().map_err(|_| format!("scheme must be 1, 2 or 3, got {s:?}"))?;
    Scheme::from_number(n).map_err(|e| e.to_string())
}

fn write_jsonl_or_stdout(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- counting

#[derive(Args, Debug)]
pub struct StreamCountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Labelling scheme the network was trained with (1, 2 or 3).
    #[arg(long, default_value = "3", value_parser = parse_scheme)]
    pub scheme: Scheme,
    /// Frame stream file (`-` for stdin) or directory of images, at the
    /// network's input rate.
    #[arg(long)]
    pub frames: PathBuf,
    /// Ground-truth event track; adds the true count and MAPE.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Seed of a freshly initialized network.
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn stream_count(a: &StreamCountArgs) -> Result<()> {
    let truth = match &a.events {
        Some(p) => Some(EventTrack::from_json(&read_text(p)?)?.end_count()?),
        None => None,
    };
    let model = a.model.model(Some(a.scheme.num_classes()), a.seed)?;
    let mut session = StreamSession::open(&model)?;
    let mut decoder = CountDecoder::new(a.scheme);
    let input = model.spec().input;
    let mut on_frame = |frame: &sirep::data::RawFrame, decoder: &mut CountDecoder| -> Result<()> {
        if let Some(out) = session.push_frame(&frame_to_input(frame, &input)?)? {
            decoder.push(argmax(&out.probabilities))?;
            emit(&json!({
                "frame_index": out.frame_index,
                "probabilities": out.probabilities,
                "count": decoder.count(),
            }))?;
        }
        Ok(())
    };
    let mut frames = 0usize;
    if a.frames.is_dir() {
        for f in read_image_dir(&a.frames)? {
            on_frame(&f, &mut decoder)?;
            frames += 1;
        }
    } else if let Some(mut stream) = FrameStream::open(&a.frames)? {
        while let Some(f) = stream.next_frame()? {
            on_frame(&f, &mut decoder)?;
            frames += 1;
        }
    }
    let result = decoder.finish(truth);
    let mape = match truth {
        Some(t) if t > 0 => Some(mape(&[result.predicted_count], &[t])?),
        _ => None,
    };
    emit(&json!({
        "frames": frames,
        "count": result.predicted_count,
        "event_steps": result.event_steps,
        "true_count": truth,
        "mape": mape,
    }))
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Frame stream file (`-` for stdin) or directory of images.
    #[arg(long)]
    pub frames: PathBuf,
    /// Frame rate of the input; other rates are resampled.
    #[arg(long, default_value_t = 16.0)]
    pub native_fps: f64,
    /// Classes of a freshly initialized network.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let model = a.model.model(a.classes, a.seed)?;
    let clip = clip_to_input(&read_all(&a.frames)?, a.native_fps, &model.spec().input)?;
    if clip.is_empty() {
        return Ok(());
    }
    let decimation = model.spec().temporal_decimation();
    for (step, p) in model.run_offline(&clip, None)?.into_iter().enumerate() {
        emit(&json!({ "step": step, "frame_index": step * decimation, "probabilities": p }))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Input frame rate.
    #[arg(long, default_value_t = 16.0, allow_negative_numbers = true)]
    pub fps: f64,
}

pub fn cost(a: &CostArgs, table: bool) -> Result<()> {
    let report = per_second_cost(&a.net.spec(None)?, a.fps)?;
    if table {
        print!("{}", report.table());
    }
    emit(&report)
}

// ---------------------------------------------------------------- training

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["synthetic", "manifest"])))]
pub struct DataArgs {
    /// Use generated oscillating-bar videos.
    #[arg(long)]
    pub synthetic: bool,
    /// Dataset manifest (JSON lines); entries need event tracks.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Train on N videos per class of the manifest's training split.
    #[arg(long, requires = "manifest")]
    pub few_shot: Option<usize>,
}

fn load_manifest(path: &Path) -> Result<SplitManifest> {
    load_and_validate_manifest(path, &ManifestPolicy::default())
}

/// Videos of one split; paths in the manifest are relative to it.
fn manifest_videos(path: &Path, manifest: &SplitManifest, split: Split, model: &Model) -> Result<Vec<LabeledVideo>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for e in manifest.split(split) {
        let events =
            e.events.as_ref().ok_or_else(|| Error::validation(format!("video {} has no event track", e.video_id)))?;
        let track = EventTrack::from_json(&read_text(&base.join(events))?)?;
        let clip = clip_to_input(&read_all(&base.join(&e.path))?, e.native_fps, &model.spec().input)?;
        out.push(LabeledVideo {
            exercise: manifest.taxonomy.exercise_of(&e.class).map_or_else(|| e.class.clone(), str::to_string),
            true_count: track.end_count()?,
            clip,
            track,
        });
    }
    Ok(out)
}

fn synthetic_videos(model: &Model, seed: u64) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>)> {
    let spec = model.spec();
    if spec.input.channels != 3 || spec.input.height != spec.input.width {
        return Err(Error::contract("synthetic videos need a square RGB network input"));
    }
    let cfg = BarVideoConfig {
        size: spec.input.height,
        fps: spec.input.fps,
        decimation: spec.temporal_decimation(),
        ..BarVideoConfig::default()
    };
    synthetic_dataset(&cfg, &SyntheticSplit::default(), derive_seed(seed, "synthetic"))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value = "3", value_parser = parse_scheme)]
    pub scheme: Scheme,
    /// Trainable suffix: the last k parameterized layers (default: all).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// Optimizer steps (one batch each).
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Windows per batch.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Frames per training window.
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    /// Start every window of a batch from empty temporal state.
    #[arg(long)]
    pub reset_at_boundaries: bool,
    /// Split evaluated after training (manifest data).
    #[arg(long, default_value = "validation")]
    pub eval_split: Split,
    /// Output directory for `checkpoint.json`, `checkpoint.bin` and `train_log.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut model = Model::init(a.net.spec(Some(a.scheme.num_classes()))?, sirep::tensor::DType::F64, a.seed)?;
    let init_hash = params_hash(&model);
    let (train_set, held_out) = match &a.data.manifest {
        Some(p) => {
            let manifest = load_manifest(p)?;
            let train_split = match a.data.few_shot {
                Some(n) => sample_fewshot(&manifest, n, derive_seed(a.seed, "few-shot"))?,
                None => manifest.clone(),
            };
            (
                manifest_videos(p, &train_split, Split::Train, &model)?,
                manifest_videos(p, &manifest, a.eval_split, &model)?,
            )
        }
        None => synthetic_videos(&model, a.seed)?,
    };
    let cfg = TrainConfig {
        k: a.k.unwrap_or(model.layers().len()),
        learning_rate: a.lr,
        momentum: a.momentum,
        steps: a.steps,
        batch_size: a.batch_size,
        window_frames: a.window,
        seed: a.seed,
        scheme: a.scheme,
        reset_at_boundaries: a.reset_at_boundaries,
        loss: None,
    };
    let report = train_counting_head(&mut model, &train_set, &held_out, &cfg, |e| {
        if e.step % 50 == 0 {
            log::info!("step {} loss {:.5}", e.step, e.loss);
        }
    })?;
    fs::create_dir_all(&a.out)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("creating {}: {e}", a.out.display()))))?;
    let mut log_text = String::new();
    for e in &report.log {
        log_text.push_str(&serde_json::to_string(e)?);
        log_text.push('\n');
    }
    write_atomic(&a.out.join("train_log.jsonl"), log_text.as_bytes())?;
    let ckpt = a.out.join("checkpoint.json");
    let header = save_checkpoint(&model, &ckpt)?;
    emit(&json!({
        "scheme": a.scheme,
        "steps": a.steps,
        "final_loss": report.log.last().map(|e| e.loss),
        "mape": report.eval.mape,
        "mape_per_exercise": report.eval.mape_per_exercise,
        "checkpoint": ckpt,
        "sha256": header.sha256,
        "init_sha256": init_hash,
    }))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint header written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "3", value_parser = parse_scheme)]
    pub scheme: Scheme,
    /// Manifest split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Seed of the synthetic data (matches `train --seed`).
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn eval(a: &EvalArgs, table: bool) -> Result<()> {
    let model = sirep::train::load_checkpoint(&a.checkpoint)?;
    let videos = match &a.data.manifest {
        Some(p) => manifest_videos(p, &load_manifest(p)?, a.split, &model)?,
        None => synthetic_videos(&model, a.seed)?.1,
    };
    let report = evaluate_counts(&model, &videos, a.scheme)?;
    if table {
        println!("{:<16} {:>8}", "exercise", "MAPE %");
        for (k, v) in &report.mape_per_exercise {
            println!("{k:<16} {v:>8.2}");
        }
        println!("{:<16} {:>8.2}", "all", report.mape);
    }
    emit(&report)
}

// ---------------------------------------------------------------- data

#[derive(Args, Debug)]
pub struct ManifestValidateArgs {
    /// Manifest file (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dataset policy: `none` (structural checks only) or `exercise`
    /// (class sizes, durations and split sizes of the exercise dataset).
    #[arg(long, default_value = "none", value_parser = ["none", "exercise"])]
    pub policy: String,
    /// Taxonomy JSON (default: the bundled exercise taxonomy).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

pub fn manifest_validate(a: &ManifestValidateArgs, table: bool) -> Result<()> {
    let policy = if a.policy == "exercise" { ManifestPolicy::exercise_videos() } else { ManifestPolicy::default() };
    let entries = parse_manifest(&read_text(&a.manifest)?)?;
    let taxonomy = match &a.taxonomy {
        Some(p) => Taxonomy::from_json(&read_text(p)?)?,
        None => Taxonomy::reference().clone(),
    };
    let manifest = SplitManifest::validate(entries, &taxonomy, &policy)?;
    let summary = manifest.summary();
    if table {
        println!("{:<12} {:>8} {:>8}", "split", "videos", "workers");
        for (split, s) in &summary.splits {
            println!("{:<12} {:>8} {:>8}", split.to_string(), s.videos, s.workers);
        }
        println!("{:<12} {:>8} {:>8}", "total", summary.total_videos, summary.total_workers);
    }
    emit(&summary)
}

#[derive(Args, Debug)]
pub struct FewshotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training videos per class.
    #[arg(long, alias = "few-shot")]
    pub n: usize,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output manifest (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn fewshot_sample(a: &FewshotArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let sampled = sample_fewshot(&manifest, a.n, a.seed)?;
    write_jsonl_or_stdout(a.out.as_deref(), &sampled.to_jsonl())
}

#[derive(Args, Debug)]
pub struct DensifyArgs {
    /// Event track JSON.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Scheme,
    /// Grid length (default: the track duration, else one past the last event).
    #[arg(long)]
    pub steps: Option<usize>,
}

pub fn densify_cmd(a: &DensifyArgs) -> Result<()> {
    let track = EventTrack::from_json(&read_text(&a.events)?)?;
    let steps = match (a.steps, track.duration) {
        (Some(s), _) => s,
        (None, Some(d)) => (d * track.fps_grid).round() as usize,
        (None, None) => track.events.last().map_or(0, |e| track.step_of(e.t) + 1),
    };
    emit(&densify(&track, a.scheme, steps)?)
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["labels", "probs"])))]
pub struct DecodeArgs {
    /// Label sequence JSON `{"scheme": n, "labels": [...]}` as written by `densify`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Probability JSON lines: arrays, or objects with a `probabilities` field.
    #[arg(long, requires = "scheme")]
    pub probs: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub true_count: Option<usize>,
}

pub fn decode_count(a: &DecodeArgs) -> Result<()> {
    let mut result = if let Some(p) = &a.labels {
        let seq: FrameLabelSeq = serde_json::from_str(&read_text(p)?)?;
        let seq = FrameLabelSeq::new(seq.scheme, seq.labels)?;
        if let Some(s) = a.scheme.filter(|s| *s != seq.scheme) {
            return Err(Error::config(format!("--scheme {s} contradicts the labels' scheme {}", seq.scheme)));
        }
        decode_labels(&seq)?
    } else {
        let text = read_text(a.probs.as_ref().expect("clap requires labels or probs"))?;
        let mut probs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)?;
            let row = v.get("probabilities").unwrap_or(&v);
            let row: Vec<f64> = serde_json::from_value(row.clone())
                .map_err(|e| Error::validation(format!("probability line {}: {e}", i + 1)))?;
            probs.push(row);
        }
        decode_probabilities(&probs, a.scheme.expect("clap requires scheme with probs"))?
    };
    result.true_count = a.true_count;
    emit(&result)
}

// ---------------------------------------------------------------- pose

#[derive(Subcommand, Debug)]
pub enum PoseCommand {
    /// Map a 33-joint pose sequence onto the 18-joint layout.
    Map(PoseMapArgs),
    /// Partitioned adjacency of a skeleton layout.
    Adjacency(PoseAdjacencyArgs),
    /// Random camera motion and window crop.
    Augment(PoseAugmentArgs),
}

#[derive(Args, Debug)]
pub struct PoseMapArgs {
    /// 33-joint pose JSON lines.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PoseAdjacencyArgs {
    /// `blazepose33`, `openpose18` or a layout JSON file.
    #[arg(long, default_value = "openpose18")]
    pub layout: String,
    #[arg(long, default_value_t = 1)]
    pub max_hop: usize,
}

#[derive(Args, Debug)]
pub struct PoseAugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Joint layout of the input: `blazepose33` or `openpose18`.
    #[arg(long, default_value = "openpose18", value_parser = ["blazepose33", "openpose18"])]
    pub layout: String,
    /// Window length in frames.
    #[arg(long, default_value_t = POSE_WINDOW)]
    pub window: usize,
    #[arg(long, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn augment<L: PoseLayout>(frames: Vec<Vec<[f64; 3]>>, a: &PoseAugmentArgs) -> Result<String> {
    let seq = PoseSequence::<L>::new(frames, POSE_FPS)?;
    let (window, start) = crop_pose_window(&seq, a.window, derive_seed(a.seed, "crop"))?;
    let (moved, cams) = camera_motion_augment(&window, &CameraMotion::default(), derive_seed(a.seed, "camera"))?;
    log::info!("window starts at frame {start}; camera {cams:?}");
    Ok(write_pose_jsonl(&moved))
}

pub fn pose(cmd: &PoseCommand) -> Result<()> {
    match cmd {
        PoseCommand::Map(a) => {
            let seq = PoseSequence::<BlazePose33>::new(read_pose_jsonl(&read_text(&a.input)?)?, POSE_FPS)?;
            let mapped: PoseSequence<OpenPose18> = map_to_openpose(&seq);
            write_jsonl_or_stdout(a.out.as_deref(), &write_pose_jsonl(&mapped))
        }
        PoseCommand::Adjacency(a) => {
            let layout = match a.layout.as_str() {
                name @ ("blazepose33" | "openpose18") => build_layout(name)?,
                path => SkeletonLayout::from_json(&read_text(Path::new(path))?)?,
            };
            emit(&build_adjacency(&layout, a.max_hop)?)
        }
        PoseCommand::Augment(a) => {
            let frames = read_pose_jsonl(&read_text(&a.input)?)?;
            let text = if a.layout == "blazepose33" {
                augment::<BlazePose33>(frames, a)?
            } else {
                augment::<OpenPose18>(frames, a)?
            };
            write_jsonl_or_stdout(a.out.as_deref(), &text)
        }
    }
}

use std::marker::PhantomData;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSE_FPS: f64 = 16.0;
pub const POSE_WINDOW: usize = 90;

const MAP_33_TO_18: &str = include_str!("../../data/layouts/blazepose33_to_openpose18.json");

/// Compile-time skeleton layout tag.
pub trait PoseLayout: Copy + Default + std::fmt::Debug {
    const NAME: &'static str;
    const JOINTS: usize;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlazePose33;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpenPose18;

impl PoseLayout for BlazePose33 {
    const NAME: &'static str = "blazepose33";
    const JOINTS: usize = 33;
}

impl PoseLayout for OpenPose18 {
    const NAME: &'static str = "openpose18";
    const JOINTS: usize = 18;
}

/// One joint: normalized image coordinates and detector confidence.
pub type Joint = [f64; 3];

/// Keypoint sequence over layout `L`; coordinates are normalized to the
/// image frame `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence<L: PoseLayout> {
    frames: Vec<Vec<Joint>>,
    fps: f64,
    layout: PhantomData<L>,
}

impl<L: PoseLayout> PoseSequence<L> {
    pub fn new(frames: Vec<Vec<Joint>>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::contract(format!("pose frame rate {fps} must be positive")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != L::JOINTS) {
            return Err(Error::contract(format!(
                "pose frame {i} has {} joints, layout {} has {}",
                f.len(),
                L::NAME,
                L::JOINTS
            )));
        }
        Ok(Self { frames, fps, layout: PhantomData })
    }

    pub fn frames(&self) -> &[Vec<Joint>] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn layout_name(&self) -> &'static str {
        L::NAME
    }
}

#[derive(Deserialize)]
struct JointMap {
    sources: Vec<Vec<usize>>,
}

/// Remap a 33-landmark sequence to the 18-keypoint layout. The neck is the
/// midpoint of the shoulders, with the lower of their two confidences.
pub fn map_to_openpose(seq: &PoseSequence<BlazePose33>) -> PoseSequence<OpenPose18> {
    let map: JointMap = serde_json::from_str(MAP_33_TO_18).expect("shipped joint map parses");
    debug_assert_eq!(map.sources.len(), OpenPose18::JOINTS);
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            map.sources
                .iter()
                .map(|src| match src.as_slice() {
                    [i] => f[*i],
                    [a, b] => [(f[*a][0] + f[*b][0]) / 2.0, (f[*a][1] + f[*b][1]) / 2.0, f[*a][2].min(f[*b][2])],
                    _ => unreachable!("joint map entries have one or two sources"),
                })
                .collect()
        })
        .collect();
    PoseSequence { frames, fps: seq.fps, layout: PhantomData }
}

/// Sampling ranges of the simulated camera motion; each is `(low, high)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraMotion {
    pub rotation_deg: (f64, f64),
    pub translate_x: (f64, f64),
    pub translate_y: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for CameraMotion {
    fn default() -> Self {
        Self { rotation_deg: (-10.0, 10.0), translate_x: (-0.1, 0.1), translate_y: (-0.1, 0.1), scale: (0.9, 1.1) }
    }
}

impl CameraMotion {
    /// Ranges that always produce the identity transform.
    pub fn identity() -> Self {
        Self { rotation_deg: (0.0, 0.0), translate_x: (0.0, 0.0), translate_y: (0.0, 0.0), scale: (1.0, 1.0) }
    }
}

/// One similarity transform about the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub scale: f64,
}

impl CameraPose {
    fn lerp(a: &Self, b: &Self, u: f64) -> Self {
        let mix = |x: f64, y: f64| x + (y - x) * u;
        Self {
            rotation_deg: mix(a.rotation_deg, b.rotation_deg),
            translate_x: mix(a.translate_x, b.translate_x),
            translate_y: mix(a.translate_y, b.translate_y),
            scale: mix(a.scale, b.scale),
        }
    }

    /// Written as an offset from the input so the identity transform and
    /// pure translations are exact in floating point.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = (x - 0.5, y - 0.5);
        let (a, b) = (self.scale * cos - 1.0, self.scale * sin);
        (x + a * dx - b * dy + self.translate_x, y + b * dx + a * dy + self.translate_y)
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Sample a start and an end camera transform and apply their linear
/// interpolation over time to every joint. Confidences are untouched.
pub fn camera_motion_augment<L: PoseLayout>(
    seq: &PoseSequence<L>,
    params: &CameraMotion,
    seed: u64,
) -> Result<(PoseSequence<L>, [CameraPose; 2])> {
    let ranges = [params.rotation_deg, params.translate_x, params.translate_y, params.scale];
    if ranges.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(Error::config("camera motion ranges must be finite intervals"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = || CameraPose {
        rotation_deg: draw(&mut rng, params.rotation_deg),
        translate_x: draw(&mut rng, params.translate_x),
        translate_y: draw(&mut rng, params.translate_y),
        scale: draw(&mut rng, params.scale),
    };
    let ends = [sample(), sample()];
    let last = seq.len().saturating_sub(1).max(1) as f64;
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let cam = CameraPose::lerp(&ends[0], &ends[1], t as f64 / last);
            f.iter()
                .map(|j| {
                    let (x, y) = cam.apply(j[0], j[1]);
                    [x, y, j[2]]
                })
                .collect()
        })
        .collect();
    Ok((PoseSequence { frames, fps: seq.fps, layout: PhantomData }, ends))
}

/// Uniformly placed window of `length` consecutive poses; a shorter
/// sequence is returned whole with a warning. Returns the start index too.
pub fn crop_pose_window<L: PoseLayout>(
    seq: &PoseSequence<L>,
    length: usize,
    seed: u64,
) -> Result<(PoseSequence<L>, usize)> {
    if seq.is_empty() {
        return Err(Error::contract("cannot crop an empty pose sequence"));
    }
    if length > seq.len() {
        log::warn!("pose sequence of {} frames is shorter than the {length}-frame window", seq.len());
        return Ok((seq.clone(), 0));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..=seq.len() - length);
    Ok((PoseSequence { frames: seq.frames[start..start + length].to_vec(), fps: seq.fps, layout: PhantomData }, start))
}

#[derive(Serialize, Deserialize)]
struct PoseLine {
    joints: Vec<Joint>,
}

/// Parse JSON-lines pose frames, one `{"joints": [[x, y, c], ...]}` per line.
pub fn read_pose_jsonl(text: &str) -> Result<Vec<Vec<Joint>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<PoseLine>(l)
                .map(|p| p.joints)
                .map_err(|e| Error::validation(format!("pose line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_pose_jsonl<L: PoseLayout>(seq: &PoseSequence<L>) -> String {
    let mut out = String::new();
    for f in &seq.frames {
        out.push_str(&serde_json::to_string(&PoseLine { joints: f.clone() }).expect("pose serializes"));
        out.push('\n');
    }
    out
}

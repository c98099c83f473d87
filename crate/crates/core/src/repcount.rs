//! Repetition events, their per-step label encodings, and count decoding.
//!
//! Three label schemes are supported:
//!
//! 1. `{within, end}`: the step of each end-of-repetition event is `end`.
//! 2. `{within, middle, end}`: additionally each middle event step is `middle`.
//! 3. `{first_half, second_half}`: a middle step begins `second_half`, an end
//!    step begins `first_half`; steps before the first event are `first_half`.
//!
//! Every event occupies exactly one step of the output grid (4 fps by default).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Taxonomy;
use crate::error::{Error, Result};

pub const DEFAULT_GRID_FPS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EndOfRepetition,
    MiddleOfRepetition,
    /// Annotated state without counting semantics; ignored by the encoders.
    StateTag,
}

impl EventKind {
    fn generic(name: &str) -> Option<Self> {
        match name {
            "end_of_repetition" | "end-of-repetition" => Some(Self::EndOfRepetition),
            "middle_of_repetition" | "middle-of-repetition" => Some(Self::MiddleOfRepetition),
            "state_tag" | "state-tag" => Some(Self::StateTag),
            _ => None,
        }
    }

    /// Resolve an event label: either a generic kind name or a frame-level
    /// class of `exercise` in the reference taxonomy.
    pub fn resolve(exercise: &str, label: &str) -> Result<Self> {
        let taxonomy = Taxonomy::reference();
        let vocab = taxonomy.exercise(exercise).map(|e| &e.frame_classes);
        if let Some(k) = vocab.and_then(|v| v.get(label)) {
            return Ok(*k);
        }
        if let Some(k) = Self::generic(label) {
            return Ok(k);
        }
        let known_elsewhere = taxonomy.exercises.iter().any(|e| e.frame_classes.contains_key(label));
        Err(Error::validation(if known_elsewhere {
            format!("frame-level class {label:?} is not in the vocabulary of exercise {exercise:?}")
        } else {
            format!("unknown event kind {label:?}")
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds from the start of the video.
    pub t: f64,
    /// Generic kind name or frame-level class of the track's exercise.
    pub kind: String,
}

fn default_grid() -> f64 {
    DEFAULT_GRID_FPS
}

/// Sparse, time-sorted repetition annotations of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTrack {
    pub exercise: String,
    #[serde(default = "default_grid")]
    pub fps_grid: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub events: Vec<Event>,
}

impl EventTrack {
    pub fn from_json(s: &str) -> Result<Self> {
        let track: EventTrack = serde_json::from_str(s)?;
        track.resolve()?;
        Ok(track)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event track serializes")
    }

    /// Validate the track and return `(t, kind)` pairs.
    pub fn resolve(&self) -> Result<Vec<(f64, EventKind)>> {
        if !(self.fps_grid.is_finite() && self.fps_grid > 0.0) {
            return Err(Error::validation(format!("grid fps {} must be positive", self.fps_grid)));
        }
        let mut out = Vec::with_capacity(self.events.len());
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(Error::validation(format!("event {i}: time {} is not a non-negative number", e.t)));
            }
            if i > 0 && e.t <= self.events[i - 1].t {
                return Err(Error::validation(format!(
                    "event {i}: times must be strictly increasing ({} after {})",
                    e.t,
                    self.events[i - 1].t
                )));
            }
            if let Some(d) = self.duration {
                if e.t > d {
                    return Err(Error::validation(format!("event {i}: time {} beyond duration {d}", e.t)));
                }
            }
            out.push((e.t, EventKind::resolve(&self.exercise, &e.kind)?));
        }
        Ok(out)
    }

    pub fn end_count(&self) -> Result<usize> {
        Ok(self.resolve()?.iter().filter(|(_, k)| *k == EventKind::EndOfRepetition).count())
    }

    /// Grid step of an event time.
    pub fn step_of(&self, t: f64) -> usize {
        (t * self.fps_grid).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scheme {
    /// `{within, end}`
    EndOnly,
    /// `{within, middle, end}`
    MiddleEnd,
    /// `{first_half, second_half}`
    Halves,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::EndOnly, Scheme::MiddleEnd, Scheme::Halves];

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::EndOnly),
            2 => Ok(Self::MiddleEnd),
            3 => Ok(Self::Halves),
            _ => Err(Error::config(format!("unknown label scheme {n}; expected 1, 2 or 3"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::EndOnly => 1,
            Self::MiddleEnd => 2,
            Self::Halves => 3,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Self::EndOnly => &["within", "end"],
            Self::MiddleEnd => &["within", "middle", "end"],
            Self::Halves => &["first_half", "second_half"],
        }
    }

    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    /// Class id of the within-repetition class, if the scheme has one.
    pub fn within_class(self) -> Option<usize> {
        match self {
            Self::EndOnly | Self::MiddleEnd => Some(WITHIN),
            Self::Halves => None,
        }
    }
}

impl TryFrom<u8> for Scheme {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        Self::from_number(n)
    }
}

impl From<Scheme> for u8 {
    fn from(s: Scheme) -> u8 {
        s.number()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

pub const WITHIN: usize = 0;
pub const FIRST_HALF: usize = 0;
pub const SECOND_HALF: usize = 1;

/// Class id of an end label under schemes 1 and 2.
fn end_class(scheme: Scheme) -> usize {
    match scheme {
        Scheme::EndOnly => 1,
        Scheme::MiddleEnd => 2,
        Scheme::Halves => unreachable!("scheme 3 has no end class"),
    }
}

const MIDDLE: usize = 1;

/// Dense per-step labels under one scheme.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabelSeq {
    pub scheme: Scheme,
    pub labels: Vec<usize>,
}

impl FrameLabelSeq {
    pub fn new(scheme: Scheme, labels: Vec<usize>) -> Result<Self> {
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= scheme.num_classes()) {
            return Err(Error::validation(format!(
                "step {i}: label {l} outside the {}-class vocabulary of scheme {scheme}",
                scheme.num_classes()
            )));
        }
        Ok(Self { scheme, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concatenate sequences of the same scheme.
    pub fn concat(seqs: &[FrameLabelSeq]) -> Result<Self> {
        let scheme = seqs.first().map_or(Scheme::EndOnly, |s| s.scheme);
        if let Some(i) = seqs.iter().position(|s| s.scheme != scheme) {
            return Err(Error::contract(format!("label sequence {i} uses a different scheme")));
        }
        Ok(Self { scheme, labels: seqs.iter().flat_map(|s| s.labels.iter().copied()).collect() })
    }
}

/// Encode a sparse track into `num_steps` per-step labels.
pub fn densify(track: &EventTrack, scheme: Scheme, num_steps: usize) -> Result<FrameLabelSeq> {
    let events = track.resolve()?;
    let mut placed: Vec<(usize, EventKind)> = Vec::new();
    for (t, kind) in events {
        if kind == EventKind::StateTag {
            continue;
        }
        let step = track.step_of(t);
        if step >= num_steps {
            return Err(Error::validation(format!(
                "event at t={t}s falls on step {step}, beyond the {num_steps}-step grid"
            )));
        }
        if let Some((prev, _)) = placed.last() {
            if *prev == step {
                return Err(Error::validation(format!(
                    "two events share grid step {step} (t={t}s at {} fps)",
                    track.fps_grid
                )));
            }
        }
        placed.push((step, kind));
    }
    if placed.last().is_some_and(|(_, k)| *k == EventKind::MiddleOfRepetition) {
        log::warn!(
            "track for {:?} ends with a middle event and no closing end; trailing steps keep the last phase",
            track.exercise
        );
    }
    let mut labels = vec![0; num_steps];
    match scheme {
        Scheme::EndOnly | Scheme::MiddleEnd => {
            for (step, kind) in placed {
                match kind {
                    EventKind::EndOfRepetition => labels[step] = end_class(scheme),
                    EventKind::MiddleOfRepetition if scheme == Scheme::MiddleEnd => labels[step] = MIDDLE,
                    _ => {}
                }
            }
        }
        Scheme::Halves => {
            let mut phase = FIRST_HALF;
            let mut next = placed.iter().peekable();
            for (step, label) in labels.iter_mut().enumerate() {
                while let Some((s, kind)) = next.next_if(|(s, _)| *s == step) {
                    debug_assert_eq!(*s, step);
                    phase = match kind {
                        EventKind::MiddleOfRepetition => SECOND_HALF,
                        _ => FIRST_HALF,
                    };
                }
                *label = phase;
            }
        }
    }
    FrameLabelSeq::new(scheme, labels)
}

/// Decoded repetition count of one sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountResult {
    pub predicted_count: usize,
    /// Output steps at which a repetition was counted.
    pub event_steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_count: Option<usize>,
}

/// Online count decoder; one label per output step.
///
/// * Scheme 1 counts each maximal run of `end` labels once, at its onset.
/// * Scheme 2 counts an `end` run at its onset only if a `middle` label was
///   seen since the previously counted end (or since the start).
/// * Scheme 3 counts every `second_half -> first_half` transition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountDecoder {
    scheme: Scheme,
    prev: Option<usize>,
    armed: bool,
    step: usize,
    events: Vec<usize>,
}

impl CountDecoder {
    pub fn new(scheme: Scheme) -> Self {
        Self { scheme, prev: None, armed: false, step: 0, events: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.events.len()
    }

    pub fn event_steps(&self) -> &[usize] {
        &self.events
    }

    /// Consume the next label; returns whether a repetition was counted.
    pub fn push(&mut self, label: usize) -> Result<bool> {
        if label >= self.scheme.num_classes() {
            return Err(Error::validation(format!(
                "step {}: label {label} outside the vocabulary of scheme {}",
                self.step, self.scheme
            )));
        }
        let counted = match self.scheme {
            Scheme::EndOnly => {
                let end = end_class(self.scheme);
                label == end && self.prev != Some(end)
            }
            Scheme::MiddleEnd => {
                let end = end_class(self.scheme);
                if label == MIDDLE {
                    self.armed = true;
                }
                let onset = label == end && self.prev != Some(end);
                if onset && self.armed {
                    self.armed = false;
                    true
                } else {
                    false
                }
            }
            Scheme::Halves => label == FIRST_HALF && self.prev == Some(SECOND_HALF),
        };
        if counted {
            self.events.push(self.step);
        }
        self.prev = Some(label);
        self.step += 1;
        Ok(counted)
    }

    pub fn finish(self, true_count: Option<usize>) -> CountResult {
        CountResult { predicted_count: self.events.len(), event_steps: self.events, true_count }
    }
}

/// Index of the largest probability; ties go to the lowest class id.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn decode_labels(seq: &FrameLabelSeq) -> Result<CountResult> {
    let mut dec = CountDecoder::new(seq.scheme);
    for l in &seq.labels {
        dec.push(*l)?;
    }
    Ok(dec.finish(None))
}

/// Argmax each step's distribution, then decode.
pub fn decode_probabilities(probs: &[Vec<f64>], scheme: Scheme) -> Result<CountResult> {
    let mut dec = CountDecoder::new(scheme);
    for (i, p) in probs.iter().enumerate() {
        if p.len() != scheme.num_classes() {
            return Err(Error::contract(format!(
                "step {i}: {} probabilities for the {}-class scheme {scheme}",
                p.len(),
                scheme.num_classes()
            )));
        }
        dec.push(argmax(p))?;
    }
    Ok(dec.finish(None))
}

/// Mean absolute percentage error over videos. Videos with a true count of
/// zero have no defined percentage and are skipped with a warning.
pub fn mape(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} ground-truth counts",
            predicted.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if *t == 0 {
            log::warn!("video {i} has a true count of 0; excluded from the percentage error");
            continue;
        }
        sum += (*p as f64 - *t as f64).abs() / *t as f64 * 100.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("no video with a positive true count"));
    }
    Ok(sum / n as f64)
}

/// Random alternating middle/end track whose events sit exactly on grid
/// steps, each separated by 1 to `max_gap` steps.
pub fn random_track(seed: u64, fps_grid: f64, num_steps: usize, max_gap: usize) -> EventTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut step = rng.gen_range(0..=max_gap);
    let mut middle = true;
    while step < num_steps {
        let kind = if middle { "middle_of_repetition" } else { "end_of_repetition" };
        events.push(Event { t: step as f64 / fps_grid, kind: kind.into() });
        middle = !middle;
        step += rng.gen_range(1..=max_gap);
    }
    EventTrack { exercise: "synthetic".into(), fps_grid, duration: Some(num_steps as f64 / fps_grid), events }
}

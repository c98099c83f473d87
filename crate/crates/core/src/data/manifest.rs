use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Taxonomy;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

/// One video of a dataset manifest (one JSON object per line on disk).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: String,
    /// Qualified video-level class, `"<exercise>/<class>"`.
    pub class: String,
    pub worker_id: String,
    pub split: Split,
    pub native_fps: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<String>,
}

/// Optional dataset-level constraints checked on top of the structural ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestPolicy {
    /// Inclusive bounds on videos per class, over all splits.
    pub per_class_videos: Option<(usize, usize)>,
    /// Inclusive bounds on video duration in seconds.
    pub duration_seconds: Option<(f64, f64)>,
    /// Expected number of videos per split.
    pub declared_sizes: Option<BTreeMap<Split, usize>>,
}

impl ManifestPolicy {
    /// Statistics of the exercise-video dataset: 130 to 140 videos per
    /// class, 5 to 8 seconds each, 4000/711/800 videos per split.
    pub fn exercise_videos() -> Self {
        Self {
            per_class_videos: Some((130, 140)),
            duration_seconds: Some((5.0, 8.0)),
            declared_sizes: Some(BTreeMap::from([(Split::Train, 4000), (Split::Validation, 711), (Split::Test, 800)])),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub videos: usize,
    pub workers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub splits: BTreeMap<Split, SplitSummary>,
    pub total_videos: usize,
    pub total_workers: usize,
}

/// Validated dataset index.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub entries: Vec<ManifestEntry>,
    pub taxonomy: Taxonomy,
}

impl SplitManifest {
    /// Check structural invariants and `policy`; violations name the
    /// offending entries or workers.
    pub fn validate(entries: Vec<ManifestEntry>, taxonomy: &Taxonomy, policy: &ManifestPolicy) -> Result<Self> {
        if entries.is_empty() {
            log::warn!("manifest has no entries");
        }
        let mut problems = Vec::new();
        let mut ids = BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.video_id.as_str()) {
                problems.push(format!("duplicate video id {}", e.video_id));
            }
            if taxonomy.class_id(&e.class).is_none() {
                problems.push(format!("{}: unknown class {:?}", e.video_id, e.class));
            }
            if !(e.duration.is_finite() && e.duration > 0.0) {
                problems.push(format!("{}: duration {} must be positive", e.video_id, e.duration));
            } else if let Some((lo, hi)) = policy.duration_seconds {
                if e.duration < lo || e.duration > hi {
                    problems.push(format!("{}: duration {}s outside [{lo}, {hi}]", e.video_id, e.duration));
                }
            }
            if !(e.native_fps.is_finite() && e.native_fps > 0.0) {
                problems.push(format!("{}: frame rate {} must be positive", e.video_id, e.native_fps));
            }
        }
        let mut workers: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for e in &entries {
            workers.entry(&e.worker_id).or_default().insert(e.split);
        }
        let overlapping: Vec<_> = workers
            .iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(w, s)| format!("{w} ({})", s.iter().map(Split::to_string).collect::<Vec<_>>().join(", ")))
            .collect();
        if !overlapping.is_empty() {
            problems.push(format!("workers appear in more than one split: {}", overlapping.join("; ")));
        }
        let manifest = Self { entries, taxonomy: taxonomy.clone() };
        if let Some((lo, hi)) = policy.per_class_videos {
            for (class, n) in manifest.class_counts(None) {
                if n < lo || n > hi {
                    problems.push(format!("class {class:?} has {n} videos, outside [{lo}, {hi}]"));
                }
            }
        }
        if let Some(declared) = &policy.declared_sizes {
            let summary = manifest.summary();
            for (split, want) in declared {
                let got = summary.splits.get(split).map_or(0, |s| s.videos);
                if got != *want {
                    problems.push(format!("split {split} has {got} videos, declared {want}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::validation(problems.join("\n")));
        }
        Ok(manifest)
    }

    pub fn summary(&self) -> ManifestSummary {
        let mut splits: BTreeMap<Split, (usize, BTreeSet<&str>)> = BTreeMap::new();
        for e in &self.entries {
            let s = splits.entry(e.split).or_default();
            s.0 += 1;
            s.1.insert(&e.worker_id);
        }
        let all_workers: BTreeSet<&str> = self.entries.iter().map(|e| e.worker_id.as_str()).collect();
        ManifestSummary {
            splits: splits.into_iter().map(|(k, (videos, w))| (k, SplitSummary { videos, workers: w.len() })).collect(),
            total_videos: self.entries.len(),
            total_workers: all_workers.len(),
        }
    }

    /// Videos per class, optionally restricted to one split.
    pub fn class_counts(&self, split: Option<Split>) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in self.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
            *counts.entry(e.class.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        entries_to_jsonl(&self.entries)
    }
}

pub fn entries_to_jsonl(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        out.push('\n');
    }
    out
}

/// Parse JSON-lines manifest text; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::validation(format!("manifest line {}: {e}", i + 1))))
        .collect()
}

pub fn load_and_validate_manifest(path: &Path, policy: &ManifestPolicy) -> Result<SplitManifest> {
    let text = std::fs::read_to_string(path)?;
    SplitManifest::validate(parse_manifest(&text)?, Taxonomy::reference(), policy)
}

/// Keep exactly `n` training videos per class, drawn uniformly without
/// replacement; validation and test entries are untouched. Every class
/// present in the manifest must have at least `n` training videos.
pub fn sample_fewshot(manifest: &SplitManifest, n: usize, seed: u64) -> Result<SplitManifest> {
    if n == 0 {
        return Err(Error::config("few-shot size must be positive"));
    }
    let mut train_by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let slot = train_by_class.entry(e.class.as_str()).or_default();
        if e.split == Split::Train {
            slot.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; manifest.entries.len()];
    // taxonomy order keeps the random stream independent of file order
    let labels = manifest.taxonomy.class_labels();
    let mut classes: Vec<_> = train_by_class.into_iter().collect();
    classes.sort_by_key(|(c, _)| labels.iter().position(|l| l == c));
    for (class, mut idx) in classes {
        if idx.len() < n {
            return Err(Error::validation(format!(
                "class {class:?} has {} training videos, fewer than {n}",
                idx.len()
            )));
        }
        idx.sort_by(|a, b| manifest.entries[*a].video_id.cmp(&manifest.entries[*b].video_id));
        for k in sample(&mut rng, idx.len(), n) {
            keep[idx[k]] = true;
        }
    }
    let entries = manifest
        .entries
        .iter()
        .zip(&keep)
        .filter(|(e, k)| e.split != Split::Train || **k)
        .map(|(e, _)| e.clone())
        .collect();
    Ok(SplitManifest { entries, taxonomy: manifest.taxonomy.clone() })
}

/// Synthetic manifest with the exercise-video dataset statistics: 40
/// classes, 4000/711/800 videos and 129/20/165 disjoint workers per split,
/// 130 to 140 videos per class, durations in [5, 8] seconds.
pub fn synthetic_exercise_manifest(seed: u64) -> Vec<ManifestEntry> {
    let taxonomy = Taxonomy::reference();
    let labels = taxonomy.class_labels();
    let classes = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = [(Split::Train, 4000, 129), (Split::Validation, 711, 20), (Split::Test, 800, 165)];
    let mut entries = Vec::new();
    let mut worker_base = 0;
    for (split, videos, workers) in plan {
        for i in 0..videos {
            // round-robin over classes spreads the remainder over the first ones
            let class = &labels[i % classes];
            let worker = worker_base + i % workers;
            let id = format!("{split}-{i:05}");
            entries.push(ManifestEntry {
                path: format!("videos/{id}.mp4"),
                video_id: id,
                class: class.clone(),
                worker_id: format!("worker-{worker:03}"),
                split,
                native_fps: if rng.gen_bool(0.5) { 30.0 } else { 16.0 },
                duration: rng.gen_range(5.0..=8.0),
                events: None,
            });
        }
        worker_base += workers;
    }
    entries
}

//! Dataset manifests, split validation, few-shot sampling and the frame
//! preprocessing contract shared by training and evaluation.

mod manifest;
mod preprocess;
mod taxonomy;

pub use manifest::{
    entries_to_jsonl, load_and_validate_manifest, parse_manifest, sample_fewshot, synthetic_exercise_manifest,
    ManifestEntry, ManifestPolicy, ManifestSummary, Split, SplitManifest, SplitSummary,
};
pub use preprocess::{
    augment_clip, batch_concat_temporal, derive_seed, preprocess_clip, resample_indices, resize_bilinear,
    square_padding, AugmentConfig, AugmentDraw, RawFrame, TemporalBatch, CROP_LEN, TARGET_FPS, TARGET_SIZE,
};
pub use taxonomy::{Exercise, Taxonomy, REFERENCE_TAXONOMY};

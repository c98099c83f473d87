use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::repcount::FrameLabelSeq;
use crate::tensor::Frames;

pub const TARGET_FPS: f64 = 16.0;
pub const TARGET_SIZE: usize = 256;
pub const CROP_LEN: usize = 63;

/// Decoded 8-bit frame, rows of interleaved channels (`H x W x C`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::contract(format!(
                "{width}x{height}x{channels} frame needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }
}

/// Source frame picked for each output frame when resampling to `target`
/// fps: output `j` takes source `floor(j * native / target)`.
pub fn resample_indices(source_len: usize, native_fps: f64, target_fps: f64) -> Vec<usize> {
    (0..)
        .map(|j: usize| (j as f64 * native_fps / target_fps).floor() as usize)
        .take_while(|i| *i < source_len)
        .collect()
}

/// Black padding `(top, bottom, left, right)` that makes a frame square,
/// split evenly with any odd pixel going after the image.
pub fn square_padding(height: usize, width: usize) -> (usize, usize, usize, usize) {
    let side = height.max(width);
    let (dv, dh) = (side - height, side - width);
    (dv / 2, dv - dv / 2, dh / 2, dh - dh / 2)
}

/// Pad to square with zeros and convert to planar `[C, S, S]` floats in [0, 1].
fn pad_square(frame: &RawFrame) -> (Vec<f64>, usize) {
    let (top, _, left, _) = square_padding(frame.height, frame.width);
    let side = frame.height.max(frame.width);
    let c = frame.channels;
    let mut out = vec![0.0; c * side * side];
    for y in 0..frame.height {
        for x in 0..frame.width {
            for ch in 0..c {
                out[(ch * side + y + top) * side + x + left] =
                    frame.data[(y * frame.width + x) * c + ch] as f64 / 255.0;
            }
        }
    }
    (out, side)
}

/// Bilinear resize of a planar `[C, H, W]` image with half-pixel centers.
pub fn resize_bilinear(src: &[f64], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = vec![0.0; channels * out_h * out_w];
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(c * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Resample to 16 fps, pad to square with black, resize to `size x size`
/// and scale to [0, 1].
pub fn preprocess_clip(frames: &[RawFrame], native_fps: f64, size: usize) -> Result<Frames> {
    if frames.is_empty() {
        return Err(Error::contract("cannot preprocess an empty clip"));
    }
    if !(native_fps >= TARGET_FPS) {
        return Err(Error::contract(format!("native frame rate {native_fps} is below the {TARGET_FPS} fps target")));
    }
    let first = &frames[0];
    if first.channels != 3 {
        return Err(Error::contract(format!("expected RGB frames, got {} channels", first.channels)));
    }
    if let Some(i) = frames.iter().position(|f| (f.width, f.height, f.channels) != (first.width, first.height, 3)) {
        return Err(Error::contract(format!("frame {i} differs in size or channel count from frame 0")));
    }
    let mut out = Frames::new(3, size, size);
    for j in resample_indices(frames.len(), native_fps, TARGET_FPS) {
        let (square, side) = pad_square(&frames[j]);
        out.push(if side == size { square } else { resize_bilinear(&square, 3, side, side, size, size) })?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop_len: usize,
    /// Per-channel multiplicative jitter range.
    pub multiplicative: (f64, f64),
    /// Per-channel additive jitter range.
    pub additive: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { crop_len: CROP_LEN, multiplicative: (0.8, 1.25), additive: (-0.05, 0.05) }
    }
}

/// Random draws made by [`augment_clip`], for inspection and replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub start: usize,
    pub multiplicative: Vec<f64>,
    pub additive: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Random contiguous crop plus per-channel color jitter, clamped to [0, 1].
pub fn augment_clip(clip: &Frames, cfg: &AugmentConfig, seed: u64) -> Result<(Frames, AugmentDraw)> {
    if clip.is_empty() {
        return Err(Error::contract("cannot augment an empty clip"));
    }
    for (lo, hi) in [cfg.multiplicative, cfg.additive] {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(format!("jitter range [{lo}, {hi}] is not a finite interval")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = if clip.len() < cfg.crop_len {
        log::warn!("clip of {} frames is shorter than the {}-frame crop; keeping it whole", clip.len(), cfg.crop_len);
        clip.len()
    } else {
        cfg.crop_len
    };
    let start = rng.gen_range(0..=clip.len() - len);
    let multiplicative: Vec<f64> = (0..clip.channels).map(|_| uniform(&mut rng, cfg.multiplicative)).collect();
    let additive: Vec<f64> = (0..clip.channels).map(|_| uniform(&mut rng, cfg.additive)).collect();
    let plane = clip.height * clip.width;
    let mut out = Frames::new(clip.channels, clip.height, clip.width);
    for f in &clip.frames[start..start + len] {
        let mut g = f.clone();
        for (c, chunk) in g.chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = (*v * multiplicative[c] + additive[c]).clamp(0.0, 1.0);
            }
        }
        out.push(g)?;
    }
    Ok((out, AugmentDraw { start, multiplicative, additive }))
}

/// Per-item seed derived from a global seed and an item key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(key.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

/// Clips concatenated along time, with their labels on the output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBatch {
    pub clip: Frames,
    pub labels: FrameLabelSeq,
    /// Frame offsets of each clip, starting at 0 and ending at the total length.
    pub frame_bounds: Vec<usize>,
    /// Output-step offsets of each clip's labels.
    pub step_bounds: Vec<usize>,
}

/// Concatenate clips and their label sequences. The label grid must cover
/// the concatenated clip exactly: `sum(labels) == ceil(sum(frames) / decimation)`.
pub fn batch_concat_temporal(clips: &[Frames], labels: &[FrameLabelSeq], decimation: usize) -> Result<TemporalBatch> {
    if clips.len() != labels.len() {
        return Err(Error::contract(format!("{} clips with {} label sequences", clips.len(), labels.len())));
    }
    if decimation == 0 {
        return Err(Error::config("temporal decimation must be positive"));
    }
    let clip = Frames::concat(clips)?;
    let seq = FrameLabelSeq::concat(labels)?;
    let expected = clip.len().div_ceil(decimation);
    if seq.len() != expected {
        return Err(Error::contract(format!(
            "label grid mismatch: {} label steps for {} output steps ({} frames at decimation {decimation})",
            seq.len(),
            expected,
            clip.len()
        )));
    }
    let bounds = |lens: Vec<usize>| {
        let mut b = vec![0];
        for l in lens {
            b.push(b.last().unwrap() + l);
        }
        b
    };
    Ok(TemporalBatch {
        clip,
        labels: seq,
        frame_bounds: bounds(clips.iter().map(Frames::len).collect()),
        step_bounds: bounds(labels.iter().map(FrameLabelSeq::len).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repcount::Scheme;

    fn solid(w: usize, h: usize, v: u8) -> RawFrame {
        RawFrame::new(w, h, 3, vec![v; w * h * 3]).unwrap()
    }

    #[test]
    fn thirty_fps_index_map() {
        let idx = resample_indices(30, 30.0, 16.0);
        assert_eq!(&idx[..5], [0, 1, 3, 5, 7]);
        for (j, i) in idx.iter().enumerate() {
            assert_eq!(*i, j * 30 / 16);
        }
        assert_eq!(idx.len(), 16);
    }

    #[test]
    fn landscape_padding_is_symmetric() {
        assert_eq!(square_padding(720, 1280), (280, 280, 0, 0));
        assert_eq!(square_padding(5, 2), (0, 0, 1, 2));
    }

    #[test]
    fn square_input_passes_through() {
        let mut f = solid(4, 4, 0);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = (i * 5) as u8;
        }
        let out = preprocess_clip(&[f.clone(), f.clone()], 16.0, 4).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.frames[0][1], 15.0 / 255.0); // channel 0, pixel (0, 1)
        assert_eq!(out.frames[0][16], 5.0 / 255.0); // channel 1, pixel (0, 0)
    }

    #[test]
    fn padded_rows_are_black() {
        let out = preprocess_clip(&[solid(8, 4, 255)], 30.0, 8).unwrap();
        let f = &out.frames[0];
        assert!(f[..16].iter().all(|v| *v == 0.0)); // top two rows of channel 0
        assert!(f[16..48].iter().all(|v| *v == 1.0));
        assert!(f[48..64].iter().all(|v| *v == 0.0));
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let src = vec![0.25; 3 * 10 * 10];
        assert!(resize_bilinear(&src, 3, 10, 10, 4, 4).iter().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn preprocess_rejects_bad_input() {
        assert!(preprocess_clip(&[], 30.0, 8).is_err());
        assert!(preprocess_clip(&[solid(4, 4, 1)], 10.0, 8).is_err());
        let gray = RawFrame::new(4, 4, 1, vec![0; 16]).unwrap();
        assert!(matches!(preprocess_clip(&[gray], 30.0, 8), Err(Error::Contract(_))));
    }

    fn ramp(len: usize) -> Frames {
        let mut f = Frames::new(3, 2, 2);
        for t in 0..len {
            f.push(vec![t as f64 / len as f64; 12]).unwrap();
        }
        f
    }

    #[test]
    fn crop_is_contiguous_and_deterministic() {
        let clip = ramp(128);
        let (a, da) = augment_clip(&clip, &AugmentConfig::default(), 5).unwrap();
        assert_eq!(a.len(), 63);
        let (b, db) = augment_clip(&clip, &AugmentConfig::default(), 5).unwrap();
        assert_eq!((a, da), (b, db));
    }

    #[test]
    fn zero_width_jitter_keeps_colors() {
        let clip = ramp(70);
        let cfg = AugmentConfig { multiplicative: (1.0, 1.0), additive: (0.0, 0.0), ..AugmentConfig::default() };
        let (out, draw) = augment_clip(&clip, &cfg, 1).unwrap();
        assert_eq!(out.frames[..], clip.frames[draw.start..draw.start + 63]);
    }

    #[test]
    fn short_clip_is_kept_whole() {
        let (out, draw) = augment_clip(&ramp(10), &AugmentConfig::default(), 1).unwrap();
        assert_eq!((out.len(), draw.start), (10, 0));
    }

    #[test]
    fn concat_two_clips() {
        let clips = [ramp(63), ramp(63)];
        let labels = [
            FrameLabelSeq::new(Scheme::Halves, vec![0; 16]).unwrap(),
            FrameLabelSeq::new(Scheme::Halves, vec![1; 16]).unwrap(),
        ];
        let b = batch_concat_temporal(&clips, &labels, 4).unwrap();
        assert_eq!(b.clip.len(), 126);
        assert_eq!(b.frame_bounds, [0, 63, 126]);
        assert_eq!(b.step_bounds, [0, 16, 32]);
        assert_eq!(b.labels.len(), 32);
        let err = batch_concat_temporal(&clips, &labels[..1], 4);
        assert!(err.is_err());
        let single = batch_concat_temporal(&clips[..1], &labels[..1], 4).unwrap();
        assert_eq!(single.frame_bounds, [0, 63]);
    }

    #[test]
    fn grid_mismatch_reports_both_lengths() {
        let labels = [FrameLabelSeq::new(Scheme::Halves, vec![0; 15]).unwrap()];
        let err = batch_concat_temporal(&[ramp(63)], &labels, 4).unwrap_err().to_string();
        assert!(err.contains("15") && err.contains("16"), "{err}");
    }

    #[test]
    fn derived_seeds_differ_by_key() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{Axis, Frames, TensorND};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, padding split evenly with the extra
    /// row/column at the bottom/right.
    #[default]
    Same,
    /// No padding; output extent `floor((in - k) / stride) + 1`.
    Valid,
}

/// Resolved spatial geometry of one convolution at a given input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialPlan {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

/// Shape-only description of a (possibly grouped, possibly temporal) convolution.
///
/// Temporal padding is always causal: `kt - 1` zero frames ahead of the
/// sequence, and outputs are emitted at input indices `0, s, 2s, ...`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub groups: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub spatial_stride: (usize, usize),
    pub temporal_stride: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            groups: 1,
            kt: 1,
            kh: 1,
            kw: 1,
            spatial_stride: (1, 1),
            temporal_stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch: channels,
            out_ch: channels,
            groups: channels,
            kt: 1,
            kh: kernel,
            kw: kernel,
            spatial_stride: (stride, stride),
            temporal_stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn full(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            groups: 1,
            kt: 1,
            kh: kernel,
            kw: kernel,
            spatial_stride: (stride, stride),
            temporal_stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn with_temporal(mut self, kt: usize, stride: usize) -> Self {
        self.kt = kt;
        self.temporal_stride = stride;
        self
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spatial_stride == (1, 1)
    }

    pub fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    pub fn kernel_len(&self) -> usize {
        self.out_ch * self.in_per_group() * self.kt * self.kh * self.kw
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::config("convolution with zero channels"));
        }
        if self.groups == 0 || !self.in_ch.is_multiple_of(self.groups) || !self.out_ch.is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        if self.kt == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::config("zero kernel extent"));
        }
        if self.spatial_stride.0 == 0 || self.spatial_stride.1 == 0 || self.temporal_stride == 0 {
            return Err(Error::config("zero stride"));
        }
        Ok(())
    }

    /// Output length of the causal temporal convolution: `ceil(t / stride)`.
    pub fn out_len(&self, t: usize) -> usize {
        t.div_ceil(self.temporal_stride)
    }

    pub fn plan(&self, h: usize, w: usize) -> Result<SpatialPlan> {
        let (sh, sw) = self.spatial_stride;
        let axis = |n: usize, k: usize, s: usize, name: &str| -> Result<(usize, usize, usize)> {
            match self.padding {
                Padding::Same => {
                    let out = n.div_ceil(s);
                    let total = ((out - 1) * s + k).saturating_sub(n);
                    Ok((out, total / 2, n + total))
                }
                Padding::Valid => {
                    if n < k {
                        return Err(Error::contract(format!(
                            "{name} extent {n} smaller than kernel {k} with valid padding"
                        )));
                    }
                    Ok(((n - k) / s + 1, 0, n))
                }
            }
        };
        if h == 0 || w == 0 {
            return Err(Error::contract("empty spatial extent"));
        }
        let (out_h, pad_top, padded_h) = axis(h, self.kh, sh, "H")?;
        let (out_w, pad_left, padded_w) = axis(w, self.kw, sw, "W")?;
        Ok(SpatialPlan { out_h, out_w, pad_top, pad_left, padded_h, padded_w })
    }
}

/// A convolution with its parameters. Kernel layout is
/// `(out_ch, in_ch / groups, kt, kh, kw)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    pub geom: ConvGeom,
    pub kernel: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Inference-mode batch normalization parameters, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ConvWeights {
    pub fn new(geom: ConvGeom, kernel: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        geom.validate()?;
        if kernel.len() != geom.kernel_len() {
            return Err(Error::contract(format!(
                "kernel has {} values, geometry needs {}",
                kernel.len(),
                geom.kernel_len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != geom.out_ch {
                return Err(Error::contract(format!(
                    "bias has {} values for {} output channels",
                    b.len(),
                    geom.out_ch
                )));
            }
        }
        Ok(Self { geom, kernel, bias })
    }

    pub fn zeros(geom: ConvGeom) -> Self {
        Self { geom, kernel: vec![0.0; geom.kernel_len()], bias: Some(vec![0.0; geom.out_ch]) }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    #[inline]
    fn widx(&self, o: usize, ci: usize, k: usize, dy: usize, dx: usize) -> usize {
        let g = &self.geom;
        (((o * g.in_per_group() + ci) * g.kt + k) * g.kh + dy) * g.kw + dx
    }

    fn pad<'a>(&self, x: &'a [f64], h: usize, w: usize, plan: &SpatialPlan) -> Cow<'a, [f64]> {
        if plan.padded_h == h && plan.padded_w == w {
            return Cow::Borrowed(x);
        }
        let (hp, wp) = (plan.padded_h, plan.padded_w);
        let mut out = vec![0.0; self.geom.in_ch * hp * wp];
        for c in 0..self.geom.in_ch {
            for y in 0..h {
                let src = (c * h + y) * w;
                let dst = (c * hp + y + plan.pad_top) * wp + plan.pad_left;
                out[dst..dst + w].copy_from_slice(&x[src..src + w]);
            }
        }
        Cow::Owned(out)
    }

    fn check_taps(&self, taps: &[&[f64]], h: usize, w: usize) {
        assert_eq!(taps.len(), self.geom.kt, "one input frame per temporal tap");
        for t in taps {
            assert_eq!(t.len(), self.geom.in_ch * h * w, "tap frame does not match [C,H,W]");
        }
    }

    /// Compute one output frame from `kt` input frames (oldest first).
    ///
    /// Every multiply the kernel performs, including those against padding
    /// zeros, is added to `macs`.
    pub fn forward_frame(&self, taps: &[&[f64]], h: usize, w: usize, macs: &mut u64) -> Vec<f64> {
        self.check_taps(taps, h, w);
        let g = &self.geom;
        let plan = g.plan(h, w).expect("spatial plan validated by caller");
        let (oh, ow) = (plan.out_h, plan.out_w);
        let out_plane = oh * ow;
        let mut out = vec![0.0; g.out_ch * out_plane];
        if let Some(b) = &self.bias {
            for (o, bv) in b.iter().enumerate() {
                out[o * out_plane..(o + 1) * out_plane].fill(*bv);
            }
        }
        let mut count = 0u64;

        if g.is_pointwise() && g.groups == 1 {
            let plane = h * w;
            for o in 0..g.out_ch {
                let dst = &mut out[o * plane..(o + 1) * plane];
                for c in 0..g.in_ch {
                    for (k, x) in taps.iter().enumerate() {
                        let wv = self.kernel[self.widx(o, c, k, 0, 0)];
                        let src = &x[c * plane..(c + 1) * plane];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                            count += 1;
                        }
                    }
                }
            }
            *macs += count;
            return out;
        }

        let padded: Vec<Cow<[f64]>> = taps.iter().map(|x| self.pad(x, h, w, &plan)).collect();
        let (hp, wp) = (plan.padded_h, plan.padded_w);
        let (sh, sw) = g.spatial_stride;
        let (ipg, opg) = (g.in_per_group(), g.out_per_group());
        for o in 0..g.out_ch {
            let group = o / opg;
            let dst = &mut out[o * out_plane..(o + 1) * out_plane];
            for ci in 0..ipg {
                let c = group * ipg + ci;
                for (k, x) in padded.iter().enumerate() {
                    let xc = &x[c * hp * wp..(c + 1) * hp * wp];
                    for dy in 0..g.kh {
                        for dx in 0..g.kw {
                            let wv = self.kernel[self.widx(o, ci, k, dy, dx)];
                            for oy in 0..oh {
                                let row = (oy * sh + dy) * wp + dx;
                                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    *d += wv * xc[row + ox * sw];
                                    count += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        *macs += count;
        out
    }

    /// Accumulate gradients of one output frame into the kernel, bias and
    /// (optionally) the `kt` input frames.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_frame(
        &self,
        taps: &[&[f64]],
        h: usize,
        w: usize,
        grad_out: &[f64],
        grad_kernel: &mut [f64],
        grad_bias: Option<&mut [f64]>,
        grad_taps: Option<&mut [Vec<f64>]>,
    ) {
        self.check_taps(taps, h, w);
        let g = &self.geom;
        let plan = g.plan(h, w).expect("spatial plan validated by caller");
        let (oh, ow) = (plan.out_h, plan.out_w);
        let out_plane = oh * ow;
        assert_eq!(grad_out.len(), g.out_ch * out_plane);

        if let Some(gb) = grad_bias {
            for (o, b) in gb.iter_mut().enumerate() {
                *b += grad_out[o * out_plane..(o + 1) * out_plane].iter().sum::<f64>();
            }
        }

        if g.is_pointwise() && g.groups == 1 {
            let plane = h * w;
            let mut grad_taps = grad_taps;
            for o in 0..g.out_ch {
                let go = &grad_out[o * plane..(o + 1) * plane];
                for c in 0..g.in_ch {
                    for (k, x) in taps.iter().enumerate() {
                        let wi = self.widx(o, c, k, 0, 0);
                        let src = &x[c * plane..(c + 1) * plane];
                        grad_kernel[wi] += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gt) = grad_taps.as_deref_mut() {
                            let wv = self.kernel[wi];
                            let dst = &mut gt[k][c * plane..(c + 1) * plane];
                            for (d, gv) in dst.iter_mut().zip(go) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
            return;
        }

        let padded: Vec<Cow<[f64]>> = taps.iter().map(|x| self.pad(x, h, w, &plan)).collect();
        let (hp, wp) = (plan.padded_h, plan.padded_w);
        let (sh, sw) = g.spatial_stride;
        let (ipg, opg) = (g.in_per_group(), g.out_per_group());
        let want_input_grad = grad_taps.is_some();
        let mut grad_padded = if want_input_grad { vec![vec![0.0; g.in_ch * hp * wp]; g.kt] } else { Vec::new() };
        for o in 0..g.out_ch {
            let group = o / opg;
            let go = &grad_out[o * out_plane..(o + 1) * out_plane];
            for ci in 0..ipg {
                let c = group * ipg + ci;
                for (k, x) in padded.iter().enumerate() {
                    let xc = &x[c * hp * wp..(c + 1) * hp * wp];
                    for dy in 0..g.kh {
                        for dx in 0..g.kw {
                            let wi = self.widx(o, ci, k, dy, dx);
                            let wv = self.kernel[wi];
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let row = (oy * sh + dy) * wp + dx;
                                for ox in 0..ow {
                                    acc += go[oy * ow + ox] * xc[row + ox * sw];
                                }
                            }
                            grad_kernel[wi] += acc;
                            if want_input_grad {
                                let gp = &mut grad_padded[k][c * hp * wp..(c + 1) * hp * wp];
                                for oy in 0..oh {
                                    let row = (oy * sh + dy) * wp + dx;
                                    for ox in 0..ow {
                                        gp[row + ox * sw] += wv * go[oy * ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(gt) = grad_taps {
            for (k, gp) in grad_padded.iter().enumerate() {
                for c in 0..g.in_ch {
                    for y in 0..h {
                        let src = (c * hp + y + plan.pad_top) * wp + plan.pad_left;
                        let dst = (c * h + y) * w;
                        for x in 0..w {
                            gt[k][dst + x] += gp[src + x];
                        }
                    }
                }
            }
        }
    }

    /// Offline causal execution over a whole sequence. Output step `t'` reads
    /// input frames `s*t' - (kt-1) ..= s*t'`, with zero frames before index 0.
    pub fn forward_sequence(&self, input: &Frames, macs: &mut u64) -> Result<Frames> {
        if input.channels != self.geom.in_ch {
            return Err(Error::contract(format!(
                "input has {} channels (axis C), convolution expects {}",
                input.channels, self.geom.in_ch
            )));
        }
        let plan = self.geom.plan(input.height, input.width)?;
        let mut out = Frames::new(self.geom.out_ch, plan.out_h, plan.out_w);
        let zero = vec![0.0; input.frame_len()];
        for step in 0..self.geom.out_len(input.len()) {
            let taps = causal_taps(&input.frames, &zero, step, self.geom.kt, self.geom.temporal_stride);
            out.frames.push(self.forward_frame(&taps, input.height, input.width, macs));
        }
        Ok(out)
    }
}

/// Input frames feeding output step `step`, oldest first; zero frame for
/// indices before the sequence start.
pub(crate) fn causal_taps<'a>(
    frames: &'a [Vec<f64>],
    zero: &'a [f64],
    step: usize,
    kt: usize,
    stride: usize,
) -> Vec<&'a [f64]> {
    let last = step * stride;
    (0..kt)
        .map(|k| {
            let back = kt - 1 - k;
            if last >= back {
                frames[last - back].as_slice()
            } else {
                zero
            }
        })
        .collect()
}

fn split_batch(input: &TensorND) -> Result<(usize, Vec<Frames>)> {
    input.expect_axes(&[Axis::N, Axis::C, Axis::T, Axis::H, Axis::W])?;
    let s = input.shape();
    let (n, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let per = c * t * h * w;
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let sub = TensorND::new(
            vec![Axis::C, Axis::T, Axis::H, Axis::W],
            vec![c, t, h, w],
            input.data()[i * per..(i + 1) * per].to_vec(),
            input.dtype(),
        )?;
        items.push(Frames::from_tensor(&sub)?);
    }
    Ok((n, items))
}

fn join_batch(
    items: Vec<Frames>,
    dtype: super::DType,
    geom: &ConvGeom,
    t_out: usize,
    plan: SpatialPlan,
) -> Result<TensorND> {
    let n = items.len();
    let mut data = Vec::with_capacity(n * geom.out_ch * t_out * plan.out_h * plan.out_w);
    for f in items {
        data.extend(f.to_tensor(dtype).into_data());
    }
    TensorND::new(
        vec![Axis::N, Axis::C, Axis::T, Axis::H, Axis::W],
        vec![n, geom.out_ch, t_out, plan.out_h, plan.out_w],
        data,
        dtype,
    )
}

fn check_input(input: &TensorND, geom: &ConvGeom) -> Result<SpatialPlan> {
    input.expect_axes(&[Axis::N, Axis::C, Axis::T, Axis::H, Axis::W])?;
    let s = input.shape();
    if s[1] != geom.in_ch {
        return Err(Error::contract(format!(
            "axis C has extent {}, weights expect {} input channels",
            s[1], geom.in_ch
        )));
    }
    geom.plan(s[3], s[4])
}

/// Per-timestep 2D convolution over an `[N, C, T, H, W]` tensor.
pub fn conv2d(input: &TensorND, w: &ConvWeights) -> Result<TensorND> {
    if w.geom.kt != 1 || w.geom.temporal_stride != 1 {
        return Err(Error::contract(format!(
            "conv2d needs kt=1 and temporal stride 1, got kt={} stride={}",
            w.geom.kt, w.geom.temporal_stride
        )));
    }
    let plan = check_input(input, &w.geom)?;
    let (_, items) = split_batch(input)?;
    let t = input.shape()[2];
    let mut macs = 0;
    let outs = items.iter().map(|f| w.forward_sequence(f, &mut macs)).collect::<Result<Vec<_>>>()?;
    join_batch(outs, input.dtype(), &w.geom, t, plan)
}

/// Causal temporal pointwise convolution over an `[N, C, T, H, W]` tensor.
/// Output length is `ceil(T / temporal_stride)`; `T == 0` yields an empty output.
pub fn temporal_pointwise_conv(input: &TensorND, w: &ConvWeights) -> Result<TensorND> {
    if w.geom.kh != 1 || w.geom.kw != 1 {
        return Err(Error::contract(format!("temporal pointwise conv needs kh=kw=1, got {}x{}", w.geom.kh, w.geom.kw)));
    }
    let plan = check_input(input, &w.geom)?;
    let (_, items) = split_batch(input)?;
    let t_out = w.geom.out_len(input.shape()[2]);
    let mut macs = 0;
    let outs = items.iter().map(|f| w.forward_sequence(f, &mut macs)).collect::<Result<Vec<_>>>()?;
    join_batch(outs, input.dtype(), &w.geom, t_out, plan)
}

/// Fold inference-mode batch normalization into the preceding convolution.
pub fn fold_batchnorm(w: &ConvWeights, bn: &BatchNorm, eps: f64) -> Result<ConvWeights> {
    let out_ch = w.geom.out_ch;
    for (name, v) in [("scale", &bn.scale), ("shift", &bn.shift), ("mean", &bn.mean), ("var", &bn.var)] {
        if v.len() != out_ch {
            return Err(Error::contract(format!(
                "batch norm {name} has {} channels, convolution has {out_ch}",
                v.len()
            )));
        }
    }
    let per_out = w.kernel.len() / out_ch;
    let mut kernel = w.kernel.clone();
    let mut bias = w.bias.clone().unwrap_or_else(|| vec![0.0; out_ch]);
    for o in 0..out_ch {
        let denom = bn.var[o] + eps;
        if denom <= 0.0 || !denom.is_finite() {
            return Err(Error::numeric(None, format!("channel {o}: var + eps = {denom} is not positive")));
        }
        let factor = bn.scale[o] / denom.sqrt();
        for v in &mut kernel[o * per_out..(o + 1) * per_out] {
            *v *= factor;
        }
        bias[o] = (bias[o] - bn.mean[o]) * factor + bn.shift[o];
    }
    Ok(ConvWeights { geom: w.geom, kernel, bias: Some(bias) })
}

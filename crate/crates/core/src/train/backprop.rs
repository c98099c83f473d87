use crate::error::{Error, Result};
use crate::model::{relu6, Model};
use crate::netspec::Op;
use crate::tensor::conv::causal_taps;
use crate::tensor::{softmax, Frames, HeadKind};

/// Activations kept by [`forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input sequence of every convolution, by layer id.
    inputs: Vec<Frames>,
    /// Rounded pre-activation output of every convolution.
    pre: Vec<Frames>,
    /// `(source length, sampling step)` of every residual add, program order.
    skips: Vec<(usize, usize)>,
    /// Classifier input per output step.
    head_inputs: Vec<Vec<f64>>,
    features: (usize, usize, usize),
    pub probs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.probs.len()
    }

    /// Which pre-activations sit strictly inside the ReLU6 linear range.
    pub fn activation_mask(&self) -> Vec<bool> {
        self.pre.iter().flat_map(|z| z.frames.iter().flatten()).map(|v| *v > 0.0 && *v < 6.0).collect()
    }
}

/// `(layer id, start, end)` of every layer's slice of [`Model::params_flat`].
pub fn param_ranges(model: &Model) -> Vec<(usize, usize, usize)> {
    let mut offset = 0;
    let mut ranges = Vec::with_capacity(model.convs.len() + 1);
    for (id, c) in model.convs.iter().enumerate() {
        ranges.push((id, offset, offset + c.param_count()));
        offset += c.param_count();
    }
    ranges.push((model.classifier_layer(), offset, model.param_count()));
    ranges
}

/// Whole-clip forward pass that records what the backward pass needs. Its
/// outputs equal [`Model::run_offline`] bit for bit.
pub fn forward_cached(model: &Model, clip: &Frames) -> Result<ForwardCache> {
    model.check_clip(clip)?;
    let n = model.convs.len();
    let mut inputs = vec![Frames::new(0, 0, 0); n];
    let mut pre = vec![Frames::new(0, 0, 0); n];
    let mut skips = Vec::new();
    let mut cur = clip.clone();
    let mut decim = 1usize;
    let mut stack: Vec<(Frames, usize)> = Vec::new();
    for op in model.program() {
        match *op {
            Op::Conv(id) => {
                let conv = &model.convs[id];
                let mut macs = 0;
                let mut z = conv.forward_sequence(&cur, &mut macs)?;
                for f in &mut z.frames {
                    model.dtype().round_slice(f);
                }
                let mut y = z.clone();
                if model.layers()[id].relu6 {
                    y.frames.iter_mut().flatten().for_each(|v| *v = relu6(*v));
                }
                decim *= conv.geom.temporal_stride;
                inputs[id] = std::mem::replace(&mut cur, y);
                pre[id] = z;
            }
            Op::SaveSkip => stack.push((cur.clone(), decim)),
            Op::AddSkip => {
                let (src, at) = stack.pop().expect("balanced skip ops");
                let step = decim / at;
                for (t, f) in cur.frames.iter_mut().enumerate() {
                    for (v, s) in f.iter_mut().zip(&src.frames[t * step]) {
                        *v = model.dtype().round(*v + s);
                    }
                }
                skips.push((src.len(), step));
            }
        }
    }
    let pooled: Vec<Vec<f64>> = cur.frames.iter().map(|f| model.pool(f, cur.channels)).collect();
    let head_inputs: Vec<Vec<f64>> = match model.head_kind() {
        HeadKind::TemporalClassifier => pooled,
        HeadKind::ClipSoftmax => {
            let mut running = vec![0.0; cur.channels];
            pooled
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    running.iter_mut().zip(p).for_each(|(r, v)| *r += v);
                    running.iter().map(|r| r / (t + 1) as f64).collect()
                })
                .collect()
        }
    };
    let layer = model.classifier_layer();
    let probs = head_inputs
        .iter()
        .map(|x| {
            let mut macs = 0;
            let mut logits = model.classifier.forward(x, &mut macs);
            model.dtype().round_slice(&mut logits);
            let mut p = softmax(&logits, layer)?;
            model.dtype().round_slice(&mut p);
            Ok(p)
        })
        .collect::<Result<_>>()?;
    Ok(ForwardCache { inputs, pre, skips, head_inputs, features: (cur.channels, cur.height, cur.width), probs })
}

/// Parameter gradients; `None` for layers below the first trainable one.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub convs: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    pub classifier_weight: Vec<f64>,
    pub classifier_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            convs: vec![None; model.convs.len()],
            classifier_weight: vec![0.0; model.classifier.weight.len()],
            classifier_bias: vec![0.0; model.classifier.bias.len()],
        }
    }

    /// Accumulate another gradient of the same model.
    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            match (a.as_mut(), b) {
                (Some((ak, ab)), Some((bk, bb))) => {
                    ak.iter_mut().zip(bk).for_each(|(x, y)| *x += y);
                    ab.iter_mut().zip(bb).for_each(|(x, y)| *x += y);
                }
                (None, Some(g)) => *a = Some(g.clone()),
                _ => {}
            }
        }
        self.classifier_weight.iter_mut().zip(&other.classifier_weight).for_each(|(x, y)| *x += y);
        self.classifier_bias.iter_mut().zip(&other.classifier_bias).for_each(|(x, y)| *x += y);
    }

    /// Flattened in [`Model::params_flat`] order; missing layers read as zero.
    pub fn flat(&self, model: &Model) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.param_count());
        for (g, c) in self.convs.iter().zip(&model.convs) {
            match g {
                Some((k, b)) => {
                    out.extend_from_slice(k);
                    out.extend_from_slice(b);
                }
                None => out.extend(std::iter::repeat_n(0.0, c.param_count())),
            }
        }
        out.extend_from_slice(&self.classifier_weight);
        out.extend_from_slice(&self.classifier_bias);
        out
    }
}

fn ensure_finite(values: &[f64], layer: usize, what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(Some(layer), format!("non-finite {what} gradient {v}")));
    }
    Ok(())
}

/// Back-propagate `grad_logits` (one row per output step) through the head
/// and every layer from the first trainable one upward.
pub fn backward(
    model: &Model,
    cache: &ForwardCache,
    grad_logits: &[Vec<f64>],
    trainable: &[bool],
) -> Result<Gradients> {
    if grad_logits.len() != cache.steps() {
        return Err(Error::contract(format!(
            "{} logit gradients for {} output steps",
            grad_logits.len(),
            cache.steps()
        )));
    }
    if trainable.len() != model.layers().len() {
        return Err(Error::contract("trainability mask does not match the layer count"));
    }
    let mut grads = Gradients::zeros_like(model);
    let cls = model.classifier_layer();
    let mut grad_head_in = Vec::with_capacity(cache.steps());
    for (x, g) in cache.head_inputs.iter().zip(grad_logits) {
        grad_head_in.push(model.classifier.backward(x, g, &mut grads.classifier_weight, &mut grads.classifier_bias));
    }
    ensure_finite(&grads.classifier_weight, cls, "weight")?;
    ensure_finite(&grads.classifier_bias, cls, "bias")?;

    let Some(first) = trainable[..cls].iter().position(|t| *t) else {
        return Ok(grads);
    };

    // classifier input -> pooled features
    let grad_pooled: Vec<Vec<f64>> = match model.head_kind() {
        HeadKind::TemporalClassifier => grad_head_in,
        HeadKind::ClipSoftmax => {
            let c = cache.features.0;
            let mut acc = vec![0.0; c];
            let mut out = vec![Vec::new(); grad_head_in.len()];
            for t in (0..grad_head_in.len()).rev() {
                acc.iter_mut().zip(&grad_head_in[t]).for_each(|(a, g)| *a += g / (t + 1) as f64);
                out[t] = acc.clone();
            }
            out
        }
    };
    // pooled -> feature maps
    let (c, h, w) = cache.features;
    let plane = h * w;
    let mut g = Frames::new(c, h, w);
    for gp in &grad_pooled {
        let mut f = vec![0.0; c * plane];
        for (ch, v) in gp.iter().enumerate() {
            f[ch * plane..(ch + 1) * plane].fill(v / plane as f64);
        }
        g.frames.push(f);
    }

    let mut skip_records = cache.skips.clone();
    let mut skip_grads: Vec<Frames> = Vec::new();
    for op in model.program().iter().rev() {
        match *op {
            Op::Conv(id) => {
                if id < first {
                    break;
                }
                let conv = &model.convs[id];
                let x = &cache.inputs[id];
                let z = &cache.pre[id];
                if model.layers()[id].relu6 {
                    for (gf, zf) in g.frames.iter_mut().zip(&z.frames) {
                        for (gv, zv) in gf.iter_mut().zip(zf) {
                            if !(*zv > 0.0 && *zv < 6.0) {
                                *gv = 0.0;
                            }
                        }
                    }
                }
                let geom = &conv.geom;
                let mut gk = vec![0.0; conv.kernel.len()];
                let mut gb = vec![0.0; geom.out_ch];
                let need_input = id > first;
                let mut gx = Frames::zeros(x.channels, x.len(), x.height, x.width);
                let zero = vec![0.0; x.frame_len()];
                let mut tap_grads = vec![vec![0.0; x.frame_len()]; geom.kt];
                for (t, go) in g.frames.iter().enumerate() {
                    let taps = causal_taps(&x.frames, &zero, t, geom.kt, geom.temporal_stride);
                    tap_grads.iter_mut().for_each(|f| f.fill(0.0));
                    conv.backward_frame(
                        &taps,
                        x.height,
                        x.width,
                        go,
                        &mut gk,
                        Some(&mut gb),
                        need_input.then_some(tap_grads.as_mut_slice()),
                    );
                    if need_input {
                        let last = t * geom.temporal_stride;
                        for (k, tg) in tap_grads.iter().enumerate() {
                            let back = geom.kt - 1 - k;
                            if last >= back {
                                gx.frames[last - back].iter_mut().zip(tg).for_each(|(a, b)| *a += b);
                            }
                        }
                    }
                }
                ensure_finite(&gk, id, "kernel")?;
                ensure_finite(&gb, id, "bias")?;
                grads.convs[id] = Some((gk, gb));
                g = gx;
            }
            Op::AddSkip => {
                let (src_len, step) = skip_records.pop().expect("cached skip record");
                let mut sg = Frames::zeros(g.channels, src_len, g.height, g.width);
                for (t, f) in g.frames.iter().enumerate() {
                    sg.frames[t * step].iter_mut().zip(f).for_each(|(a, b)| *a += b);
                }
                skip_grads.push(sg);
            }
            Op::SaveSkip => {
                let sg = skip_grads.pop().expect("balanced skip ops");
                for (a, b) in g.frames.iter_mut().zip(&sg.frames) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok(grads)
}

/// Plain SGD with optional momentum, applied to trainable layers only.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self { learning_rate, momentum, velocity: None }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        let trainable = model.spec().trainable_flags();
        let flat_grad = grads.flat(model);
        let mut params = model.params_flat();
        let velocity = self.velocity.get_or_insert_with(|| vec![0.0; params.len()]);
        for (id, lo, hi) in param_ranges(model) {
            if !trainable[id] {
                continue;
            }
            for i in lo..hi {
                velocity[i] = self.momentum * velocity[i] + flat_grad[i];
                params[i] -= self.learning_rate * velocity[i];
            }
        }
        model.load_params_flat(&params)
    }
}

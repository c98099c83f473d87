//! A network spec bound to concrete parameters, plus the offline
//! (whole-clip) executor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netspec::{inflate, InflationSpec, LayerDesc, LayerKind, NetworkSpec, Op, TapInit};
use crate::tensor::{softmax, ConvWeights, DType, Frames, HeadKind, Linear};

/// Per-layer instrumentation: how often each parameterized layer ran and
/// how many multiplies its kernels performed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerStats {
    pub executions: Vec<u64>,
    pub macs: Vec<u64>,
}

impl LayerStats {
    pub fn new(layers: usize) -> Self {
        Self { executions: vec![0; layers], macs: vec![0; layers] }
    }
}

#[inline]
pub(crate) fn relu6(v: f64) -> f64 {
    v.clamp(0.0, 6.0)
}

/// Classifier state carried across output steps. A clip head reports, at
/// every step, the distribution of the running mean of pooled features.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct HeadState {
    running: Vec<f64>,
    steps: usize,
}

impl HeadState {
    pub(crate) fn new(features: usize) -> Self {
        Self { running: vec![0.0; features], steps: 0 }
    }

    pub(crate) fn step(&mut self, model: &Model, pooled: &[f64], stats: Option<&mut LayerStats>) -> Result<Vec<f64>> {
        self.steps += 1;
        let input = match model.head_kind() {
            HeadKind::TemporalClassifier => pooled.to_vec(),
            HeadKind::ClipSoftmax => {
                for (r, v) in self.running.iter_mut().zip(pooled) {
                    *r += v;
                }
                self.running.iter().map(|r| r / self.steps as f64).collect()
            }
        };
        let layer = model.classifier_layer();
        let mut macs = 0;
        let mut logits = model.classifier.forward(&input, &mut macs);
        model.dtype.round_slice(&mut logits);
        if let Some(s) = stats {
            s.executions[layer] += 1;
            s.macs[layer] += macs;
        }
        let mut probs = softmax(&logits, layer)?;
        model.dtype.round_slice(&mut probs);
        Ok(probs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    dtype: DType,
    /// Convolutions in layer order (every layer except the classifier).
    pub convs: Vec<ConvWeights>,
    pub classifier: Linear,
    layers: Vec<LayerDesc>,
    program: Vec<Op>,
}

impl Model {
    /// Bind parameters to a network spec; shapes are checked against it.
    pub fn new(spec: NetworkSpec, dtype: DType, convs: Vec<ConvWeights>, classifier: Linear) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let conv_layers: Vec<_> = layers.iter().filter_map(LayerDesc::conv).collect();
        if conv_layers.len() != convs.len() {
            return Err(Error::contract(format!(
                "{} convolution parameter sets for {} convolution layers",
                convs.len(),
                conv_layers.len()
            )));
        }
        for (i, (g, w)) in conv_layers.iter().zip(&convs).enumerate() {
            if **g != w.geom || w.kernel.len() != g.kernel_len() || w.bias.as_ref().map(Vec::len) != Some(g.out_ch) {
                return Err(Error::contract(format!("layer {i}: parameters do not match the network geometry")));
            }
        }
        let (conv_ch, _, classes) = spec.head();
        if classifier.in_features != conv_ch
            || classifier.out_features != classes
            || classifier.weight.len() != conv_ch * classes
            || classifier.bias.len() != classes
        {
            return Err(Error::contract("classifier does not match the head spec"));
        }
        let program = spec.program();
        let mut model = Self { spec, dtype, convs, classifier, layers, program };
        model.round_params();
        Ok(model)
    }

    /// Random initialization, uniform with He variance; biases small uniform.
    pub fn init(spec: NetworkSpec, dtype: DType, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut classifier = None;
        for l in spec.layers() {
            match l.kind {
                LayerKind::Conv(g) => {
                    let fan_in = (g.in_per_group() * g.kt * g.kh * g.kw) as f64;
                    let a = (6.0 / fan_in).sqrt();
                    let kernel = (0..g.kernel_len()).map(|_| rng.gen_range(-a..a)).collect();
                    let bias = (0..g.out_ch).map(|_| rng.gen_range(-0.1..0.1)).collect();
                    convs.push(ConvWeights::new(g, kernel, Some(bias))?);
                }
                LayerKind::Linear { in_features, out_features } => {
                    let a = (6.0 / (in_features + out_features) as f64).sqrt();
                    classifier = Some(Linear {
                        in_features,
                        out_features,
                        weight: (0..in_features * out_features).map(|_| rng.gen_range(-a..a)).collect(),
                        bias: vec![0.0; out_features],
                    });
                }
            }
        }
        Self::new(spec, dtype, convs, classifier.expect("validated network has a classifier"))
    }

    fn round_params(&mut self) {
        let dtype = self.dtype;
        for c in &mut self.convs {
            dtype.round_slice(&mut c.kernel);
            if let Some(b) = &mut c.bias {
                dtype.round_slice(b);
            }
        }
        dtype.round_slice(&mut self.classifier.weight);
        dtype.round_slice(&mut self.classifier.bias);
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    pub(crate) fn program(&self) -> &[Op] {
        &self.program
    }

    pub fn classifier_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn head_kind(&self) -> HeadKind {
        self.spec.head().1
    }

    pub fn set_trainable(&mut self, flags: Vec<bool>) -> Result<()> {
        if flags.len() != self.layers.len() {
            return Err(Error::config(format!("{} trainability flags for {} layers", flags.len(), self.layers.len())));
        }
        self.spec.trainable = flags;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvWeights::param_count).sum::<usize>() + self.classifier.param_count()
    }

    /// All parameters flattened in layer order: kernel then bias per
    /// convolution, then classifier weight and bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for c in &self.convs {
            out.extend_from_slice(&c.kernel);
            out.extend_from_slice(c.bias.as_deref().unwrap_or(&[]));
        }
        out.extend_from_slice(&self.classifier.weight);
        out.extend_from_slice(&self.classifier.bias);
        out
    }

    pub fn load_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract(format!(
                "parameter blob has {} values, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter().copied();
        for c in &mut self.convs {
            c.kernel.iter_mut().for_each(|v| *v = it.next().unwrap());
            if let Some(b) = &mut c.bias {
                b.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
        }
        self.classifier.weight.iter_mut().for_each(|v| *v = it.next().unwrap());
        self.classifier.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        self.round_params();
        Ok(())
    }

    /// Inflate the network and transfer the 2D weights onto the temporal taps.
    pub fn inflate(&self, spec: &InflationSpec) -> Result<Model> {
        let new_spec = inflate(&self.spec, spec)?;
        let new_layers = new_spec.layers();
        let mut convs = Vec::with_capacity(self.convs.len());
        for (old, l) in self.convs.iter().zip(new_layers.iter().filter_map(LayerDesc::conv)) {
            if old.geom == *l {
                convs.push(old.clone());
                continue;
            }
            if old.geom.kt != 1 {
                return Err(Error::config("re-inflating an already temporal convolution"));
            }
            let kt = l.kt;
            let spatial = old.geom.kh * old.geom.kw;
            let groups_in = old.kernel.len() / spatial;
            let mut kernel = vec![0.0; old.kernel.len() * kt];
            for row in 0..groups_in {
                let src = &old.kernel[row * spatial..(row + 1) * spatial];
                for k in 0..kt {
                    let dst = &mut kernel[(row * kt + k) * spatial..(row * kt + k + 1) * spatial];
                    match spec.init {
                        TapInit::Identity if k == kt - 1 => dst.copy_from_slice(src),
                        TapInit::Identity => {}
                        TapInit::Averaged => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = s / kt as f64;
                            }
                        }
                    }
                }
            }
            convs.push(ConvWeights::new(*l, kernel, old.bias.clone())?);
        }
        Model::new(new_spec, self.dtype, convs, self.classifier.clone())
    }

    pub(crate) fn check_frame(&self, frame: &[f64], index: usize) -> Result<()> {
        let inp = &self.spec.input;
        let expected = inp.channels * inp.height * inp.width;
        if frame.len() != expected {
            return Err(Error::contract(format!(
                "frame {index} has {} values, input contract is [C={}, H={}, W={}]",
                frame.len(),
                inp.channels,
                inp.height,
                inp.width
            )));
        }
        if let Some(v) = frame.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(None, format!("frame {index} holds non-finite pixel {v}")));
        }
        if let Some(v) = frame.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("frame {index} holds pixel {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub(crate) fn check_clip(&self, clip: &Frames) -> Result<()> {
        let inp = &self.spec.input;
        if (clip.channels, clip.height, clip.width) != (inp.channels, inp.height, inp.width) {
            return Err(Error::contract(format!(
                "clip is [C={}, H={}, W={}], input contract is [C={}, H={}, W={}]",
                clip.channels, clip.height, clip.width, inp.channels, inp.height, inp.width
            )));
        }
        for (i, f) in clip.frames.iter().enumerate() {
            self.check_frame(f, i)?;
        }
        Ok(())
    }

    /// Apply the activation and storage rounding of layer `id` in place.
    pub(crate) fn finish_layer(&self, id: usize, frame: &mut [f64]) {
        let act = self.layers[id].relu6;
        for v in frame.iter_mut() {
            let r = self.dtype.round(*v);
            *v = if act { relu6(r) } else { r };
        }
    }

    /// Run the backbone over a whole clip and return head-convolution features.
    pub fn forward_features(&self, clip: &Frames, mut stats: Option<&mut LayerStats>) -> Result<Frames> {
        self.check_clip(clip)?;
        let mut cur = clip.clone();
        let mut decim = 1usize;
        let mut skips: Vec<(Frames, usize)> = Vec::new();
        for op in &self.program {
            match *op {
                Op::Conv(id) => {
                    let conv = &self.convs[id];
                    let mut macs = 0;
                    let mut out = conv.forward_sequence(&cur, &mut macs)?;
                    for f in &mut out.frames {
                        self.finish_layer(id, f);
                    }
                    if let Some(s) = stats.as_deref_mut() {
                        s.executions[id] += out.len() as u64;
                        s.macs[id] += macs;
                    }
                    decim *= conv.geom.temporal_stride;
                    cur = out;
                }
                Op::SaveSkip => skips.push((cur.clone(), decim)),
                Op::AddSkip => {
                    let (src, at) = skips.pop().expect("balanced skip ops");
                    let step = decim / at;
                    for (t, f) in cur.frames.iter_mut().enumerate() {
                        for (v, s) in f.iter_mut().zip(&src.frames[t * step]) {
                            *v = self.dtype.round(*v + s);
                        }
                    }
                }
            }
        }
        Ok(cur)
    }

    /// Map pooled per-step features to per-step distributions.
    pub(crate) fn classify_steps(
        &self,
        pooled: &[Vec<f64>],
        mut stats: Option<&mut LayerStats>,
    ) -> Result<Vec<Vec<f64>>> {
        let mut head = HeadState::new(self.classifier.in_features);
        pooled.iter().map(|p| head.step(self, p, stats.as_deref_mut())).collect()
    }

    /// Whole-clip inference: one distribution per output step.
    pub fn run_offline(&self, clip: &Frames, mut stats: Option<&mut LayerStats>) -> Result<Vec<Vec<f64>>> {
        let feats = self.forward_features(clip, stats.as_deref_mut())?;
        let pooled: Vec<Vec<f64>> = feats.frames.iter().map(|f| self.pool(f, feats.channels)).collect();
        self.classify_steps(&pooled, stats)
    }

    pub(crate) fn pool(&self, frame: &[f64], channels: usize) -> Vec<f64> {
        let mut p = crate::tensor::head::spatial_mean(frame, channels);
        self.dtype.round_slice(&mut p);
        p
    }
}

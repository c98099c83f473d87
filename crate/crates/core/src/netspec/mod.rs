//! Declarative 2D backbones built from inverted-residual blocks, and the
//! temporal inflation transform that turns them into streaming video networks.
//!
//! Inverted-residual blocks are indexed from 0 in network order; the stem and
//! the head are not counted. A network is a list of [`BlockSpec`]s that starts
//! with exactly one stem and ends with exactly one head.

mod inflate;
mod random;
mod reference;
mod trace;

pub use inflate::{
    inflate, trainability_mask, InflationMode, InflationSpec, InflationTarget, Recipe, TapInit, Trainability,
};
pub use random::random_network;
pub use reference::{build_backbone, build_reference_backbone, BackboneTable, REFERENCE_TABLE};
pub use trace::{shape_trace, LayerShape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, HeadKind};

/// Temporal kernel attached to a pointwise convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalConv {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `min(max(x, 0), 6)`
    #[default]
    Relu6,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrBlock {
    pub index: usize,
    pub expansion_ratio: f64,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub skip: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand_temporal: Option<TemporalConv>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_temporal: Option<TemporalConv>,
}

impl IrBlock {
    /// Width of the expanded representation.
    pub fn mid_ch(&self) -> usize {
        (self.in_ch as f64 * self.expansion_ratio).round() as usize
    }

    pub fn has_expand(&self) -> bool {
        self.expansion_ratio != 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockSpec {
    Stem {
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    InvertedResidual(IrBlock),
    Head {
        conv_ch: usize,
        classifier: HeadKind,
        num_classes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temporal: Option<TemporalConv>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputContract {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: InputContract,
    pub blocks: Vec<BlockSpec>,
    /// One flag per parameterized layer; empty means all trainable.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trainable: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Stem,
    Expand,
    Depthwise,
    Project,
    HeadConv,
    Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Conv(ConvGeom),
    Linear { in_features: usize, out_features: usize },
}

/// One parameterized layer in execution order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDesc {
    pub id: usize,
    pub role: LayerRole,
    /// Inverted-residual block index, when the layer belongs to one.
    pub block: Option<usize>,
    pub kind: LayerKind,
    pub relu6: bool,
}

impl LayerDesc {
    pub fn name(&self) -> String {
        let role = match self.role {
            LayerRole::Stem => "stem",
            LayerRole::Expand => "expand",
            LayerRole::Depthwise => "depthwise",
            LayerRole::Project => "project",
            LayerRole::HeadConv => "head_conv",
            LayerRole::Classifier => "classifier",
        };
        match self.block {
            Some(b) => format!("block{b}.{role}"),
            None => role.to_string(),
        }
    }

    pub fn conv(&self) -> Option<&ConvGeom> {
        match &self.kind {
            LayerKind::Conv(g) => Some(g),
            LayerKind::Linear { .. } => None,
        }
    }

    pub fn is_inflated(&self) -> bool {
        self.conv().is_some_and(|g| g.kt > 1)
    }

    pub fn temporal_stride(&self) -> usize {
        self.conv().map_or(1, |g| g.temporal_stride)
    }
}

/// Backbone execution step. The classifier is not part of the program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Conv(usize),
    /// Remember the current activation as a residual source.
    SaveSkip,
    /// Add the remembered activation (sampled at the current time index).
    AddSkip,
}

fn temporal_geom(g: ConvGeom, t: Option<TemporalConv>) -> ConvGeom {
    match t {
        Some(t) => g.with_temporal(t.kernel, t.stride),
        None => g,
    }
}

impl NetworkSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }

    pub fn ir_blocks(&self) -> impl Iterator<Item = &IrBlock> {
        self.blocks.iter().filter_map(|b| match b {
            BlockSpec::InvertedResidual(ir) => Some(ir),
            _ => None,
        })
    }

    pub fn ir_blocks_mut(&mut self) -> impl Iterator<Item = &mut IrBlock> {
        self.blocks.iter_mut().filter_map(|b| match b {
            BlockSpec::InvertedResidual(ir) => Some(ir),
            _ => None,
        })
    }

    pub fn head(&self) -> (usize, HeadKind, usize) {
        match self.blocks.last() {
            Some(BlockSpec::Head { conv_ch, classifier, num_classes, .. }) => (*conv_ch, *classifier, *num_classes),
            _ => panic!("validated network ends with a head"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inp = &self.input;
        if inp.channels == 0 || inp.height == 0 || inp.width == 0 {
            return Err(Error::config("input contract has a zero extent"));
        }
        if !(inp.fps.is_finite() && inp.fps > 0.0) {
            return Err(Error::config(format!("input fps {} must be positive", inp.fps)));
        }
        let n = self.blocks.len();
        if n < 2 {
            return Err(Error::config("a network needs at least a stem and a head"));
        }
        let stems = self.blocks.iter().filter(|b| matches!(b, BlockSpec::Stem { .. })).count();
        let heads = self.blocks.iter().filter(|b| matches!(b, BlockSpec::Head { .. })).count();
        if stems != 1 || !matches!(self.blocks[0], BlockSpec::Stem { .. }) {
            return Err(Error::config("exactly one stem, placed first, is required"));
        }
        if heads != 1 || !matches!(self.blocks[n - 1], BlockSpec::Head { .. }) {
            return Err(Error::config("exactly one head, placed last, is required"));
        }
        let check_temporal = |t: &Option<TemporalConv>, what: &str| -> Result<()> {
            if let Some(t) = t {
                if t.kernel == 0 || t.kernel % 2 == 0 {
                    return Err(Error::config(format!("{what}: temporal kernel {} must be odd", t.kernel)));
                }
                if t.stride == 0 {
                    return Err(Error::config(format!("{what}: temporal stride must be positive")));
                }
            }
            Ok(())
        };
        let mut ch = inp.channels;
        let mut ir_seen = 0;
        for b in &self.blocks {
            match b {
                BlockSpec::Stem { out_ch, kernel, stride } => {
                    if *out_ch == 0 || kernel % 2 == 0 || !(1..=2).contains(stride) {
                        return Err(Error::config("stem needs positive width, odd kernel, stride 1 or 2"));
                    }
                    ch = *out_ch;
                }
                BlockSpec::InvertedResidual(ir) => {
                    let i = ir.index;
                    if i != ir_seen {
                        return Err(Error::config(format!(
                            "inverted-residual block at position {ir_seen} carries index {i}"
                        )));
                    }
                    if ir.in_ch != ch {
                        return Err(Error::config(format!(
                            "block {i}: channel chain break, expects {} input channels but receives {ch}",
                            ir.in_ch
                        )));
                    }
                    if ir.out_ch == 0 || !(ir.expansion_ratio > 0.0) || ir.mid_ch() == 0 {
                        return Err(Error::config(format!("block {i}: zero width")));
                    }
                    if ir.kernel % 2 == 0 {
                        return Err(Error::config(format!("block {i}: spatial kernel {} must be odd", ir.kernel)));
                    }
                    if !(1..=2).contains(&ir.stride) {
                        return Err(Error::config(format!("block {i}: spatial stride must be 1 or 2")));
                    }
                    if ir.skip && (ir.in_ch != ir.out_ch || ir.stride != 1) {
                        return Err(Error::config(format!(
                            "block {i}: skip needs in_ch == out_ch and spatial stride 1"
                        )));
                    }
                    if ir.expand_temporal.is_some() && !ir.has_expand() {
                        return Err(Error::config(format!("block {i}: temporal kernel on a missing expansion")));
                    }
                    check_temporal(&ir.expand_temporal, &format!("block {i} expand"))?;
                    check_temporal(&ir.project_temporal, &format!("block {i} project"))?;
                    ch = ir.out_ch;
                    ir_seen += 1;
                }
                BlockSpec::Head { conv_ch, num_classes, temporal, .. } => {
                    if *conv_ch == 0 || *num_classes < 2 {
                        return Err(Error::config("head needs positive width and at least 2 classes"));
                    }
                    check_temporal(temporal, "head conv")?;
                }
            }
        }
        let layers = self.layers().len();
        if !self.trainable.is_empty() && self.trainable.len() != layers {
            return Err(Error::config(format!(
                "{} trainability flags for {layers} parameterized layers",
                self.trainable.len()
            )));
        }
        // spatial chain must resolve at the declared input size
        self.spatial_trace()?;
        Ok(())
    }

    /// Parameterized layers in execution order, the classifier last.
    pub fn layers(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let mut push = |role, block, kind, relu6| {
            let id = out.len();
            out.push(LayerDesc { id, role, block, kind, relu6 });
        };
        let mut ch = self.input.channels;
        for b in &self.blocks {
            match b {
                BlockSpec::Stem { out_ch, kernel, stride } => {
                    push(LayerRole::Stem, None, LayerKind::Conv(ConvGeom::full(ch, *out_ch, *kernel, *stride)), true);
                    ch = *out_ch;
                }
                BlockSpec::InvertedResidual(ir) => {
                    let mid = ir.mid_ch();
                    if ir.has_expand() {
                        let g = temporal_geom(ConvGeom::pointwise(ir.in_ch, mid), ir.expand_temporal);
                        push(LayerRole::Expand, Some(ir.index), LayerKind::Conv(g), true);
                    }
                    push(
                        LayerRole::Depthwise,
                        Some(ir.index),
                        LayerKind::Conv(ConvGeom::depthwise(mid, ir.kernel, ir.stride)),
                        true,
                    );
                    let g = temporal_geom(ConvGeom::pointwise(mid, ir.out_ch), ir.project_temporal);
                    push(LayerRole::Project, Some(ir.index), LayerKind::Conv(g), false);
                    ch = ir.out_ch;
                }
                BlockSpec::Head { conv_ch, num_classes, temporal, .. } => {
                    let g = temporal_geom(ConvGeom::pointwise(ch, *conv_ch), *temporal);
                    push(LayerRole::HeadConv, None, LayerKind::Conv(g), true);
                    push(
                        LayerRole::Classifier,
                        None,
                        LayerKind::Linear { in_features: *conv_ch, out_features: *num_classes },
                        false,
                    );
                }
            }
        }
        out
    }

    /// Backbone program over the parameterized layers (classifier excluded).
    pub fn program(&self) -> Vec<Op> {
        let mut ops = Vec::new();
        let mut id = 0;
        for b in &self.blocks {
            match b {
                BlockSpec::Stem { .. } => {
                    ops.push(Op::Conv(id));
                    id += 1;
                }
                BlockSpec::InvertedResidual(ir) => {
                    if ir.skip {
                        ops.push(Op::SaveSkip);
                    }
                    let convs = if ir.has_expand() { 3 } else { 2 };
                    for _ in 0..convs {
                        ops.push(Op::Conv(id));
                        id += 1;
                    }
                    if ir.skip {
                        ops.push(Op::AddSkip);
                    }
                }
                BlockSpec::Head { .. } => {
                    ops.push(Op::Conv(id));
                }
            }
        }
        ops
    }

    /// Per-layer trainability, defaulting to all trainable.
    pub fn trainable_flags(&self) -> Vec<bool> {
        if self.trainable.is_empty() {
            vec![true; self.layers().len()]
        } else {
            self.trainable.clone()
        }
    }

    /// Product of all temporal strides: input frames per output step.
    pub fn temporal_decimation(&self) -> usize {
        self.layers().iter().map(LayerDesc::temporal_stride).product()
    }

    /// Output steps produced for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        self.layers().iter().fold(frames, |t, l| t.div_ceil(l.temporal_stride()))
    }

    /// Spatial extents at the input of each parameterized layer.
    pub(crate) fn spatial_trace(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.input.height, self.input.width);
        let mut dims = Vec::new();
        for l in self.layers() {
            dims.push((h, w));
            if let LayerKind::Conv(g) = l.kind {
                let p = g.plan(h, w).map_err(|e| Error::config(format!("layer {} ({}): {e}", l.id, l.name())))?;
                (h, w) = (p.out_h, p.out_w);
            }
        }
        Ok(dims)
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv(g) => g.kernel_len() + g.out_ch,
                LayerKind::Linear { in_features, out_features } => in_features * out_features + out_features,
            })
            .sum()
    }

    /// Single-block network, handy for tests and toy runs.
    pub fn toy(channels: usize, size: usize, num_classes: usize) -> Self {
        Self {
            name: "toy".into(),
            input: InputContract { channels, height: size, width: size, fps: 16.0 },
            blocks: vec![
                BlockSpec::Stem { out_ch: 8, kernel: 3, stride: 2 },
                BlockSpec::InvertedResidual(IrBlock {
                    index: 0,
                    expansion_ratio: 2.0,
                    in_ch: 8,
                    out_ch: 8,
                    kernel: 3,
                    stride: 1,
                    skip: true,
                    activation: Activation::Relu6,
                    expand_temporal: None,
                    project_temporal: None,
                }),
                BlockSpec::Head { conv_ch: 16, classifier: HeadKind::TemporalClassifier, num_classes, temporal: None },
            ],
            trainable: Vec::new(),
        }
    }
}

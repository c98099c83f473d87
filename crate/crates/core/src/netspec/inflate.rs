use serde::{Deserialize, Serialize};

use super::{BlockSpec, NetworkSpec, TemporalConv};
use crate::error::{Error, Result};

/// How the 2D weights of an inflated convolution are spread over its taps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapInit {
    /// 2D weights on the newest tap, zeros elsewhere.
    #[default]
    Identity,
    /// 2D weights divided evenly across all taps.
    Averaged,
}

/// Named published recipe, used only to flag departures from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    SiEn,
    SiBlazepose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InflationTarget {
    pub block_index: usize,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InflationMode {
    /// Inflate the expansion (first pointwise) convolution of listed blocks.
    ByBlockIndex { targets: Vec<InflationTarget> },
    /// Inflate the last `k` pointwise convolutions of the network; the
    /// 1-based `strided_positions` among those `k` get `temporal_stride`.
    LastKPointwise { k: usize, temporal_kernel: usize, temporal_stride: usize, strided_positions: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InflationSpec {
    #[serde(flatten)]
    pub mode: InflationMode,
    #[serde(default)]
    pub freeze_before_first: bool,
    #[serde(default)]
    pub init: TapInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<Recipe>,
}

impl InflationSpec {
    pub fn empty() -> Self {
        Self {
            mode: InflationMode::ByBlockIndex { targets: Vec::new() },
            freeze_before_first: false,
            init: TapInit::Identity,
            recipe: None,
        }
    }

    /// Blocks 3, 7, 11, 14, 17, 20, 23, 25 with a 3-tap kernel; 7 and 14 strided by 2.
    pub fn si_en() -> Self {
        let targets = [3, 7, 11, 14, 17, 20, 23, 25]
            .into_iter()
            .map(|b| InflationTarget {
                block_index: b,
                temporal_kernel: 3,
                temporal_stride: if b == 7 || b == 14 { 2 } else { 1 },
            })
            .collect();
        Self {
            mode: InflationMode::ByBlockIndex { targets },
            freeze_before_first: false,
            init: TapInit::Identity,
            recipe: Some(Recipe::SiEn),
        }
    }

    /// Last 8 pointwise convolutions, 3-tap kernel, stride 2 at the 2nd and 4th.
    pub fn si_blazepose() -> Self {
        Self {
            mode: InflationMode::LastKPointwise {
                k: 8,
                temporal_kernel: 3,
                temporal_stride: 2,
                strided_positions: vec![2, 4],
            },
            freeze_before_first: true,
            init: TapInit::Identity,
            recipe: Some(Recipe::SiBlazepose),
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.mode {
            InflationMode::ByBlockIndex { targets } => targets.is_empty(),
            InflationMode::LastKPointwise { k, .. } => *k == 0,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("inflation spec serializes")
    }
}

#[derive(Clone, Copy)]
enum PointwiseSlot {
    Expand(usize),
    Project(usize),
    Head,
}

fn set_temporal(net: &mut NetworkSpec, slot: PointwiseSlot, t: TemporalConv) -> Result<()> {
    let already = |what: String| Error::config(format!("{what} is already inflated"));
    for b in &mut net.blocks {
        match (b, slot) {
            (BlockSpec::InvertedResidual(ir), PointwiseSlot::Expand(i)) if ir.index == i => {
                if ir.expand_temporal.is_some() {
                    return Err(already(format!("block {i} expansion")));
                }
                ir.expand_temporal = Some(t);
                return Ok(());
            }
            (BlockSpec::InvertedResidual(ir), PointwiseSlot::Project(i)) if ir.index == i => {
                if ir.project_temporal.is_some() {
                    return Err(already(format!("block {i} projection")));
                }
                ir.project_temporal = Some(t);
                return Ok(());
            }
            (BlockSpec::Head { temporal, .. }, PointwiseSlot::Head) => {
                if temporal.is_some() {
                    return Err(already("head convolution".into()));
                }
                *temporal = Some(t);
                return Ok(());
            }
            _ => {}
        }
    }
    unreachable!("pointwise slot resolved from the same network")
}

/// Apply temporal inflation directives to a network. An empty spec returns
/// the network unchanged.
pub fn inflate(net: &NetworkSpec, spec: &InflationSpec) -> Result<NetworkSpec> {
    net.validate()?;
    let mut out = net.clone();
    let mut kernels = Vec::new();
    match &spec.mode {
        InflationMode::ByBlockIndex { targets } => {
            let ir: Vec<_> = net.ir_blocks().collect();
            for (n, t) in targets.iter().enumerate() {
                if n > 0 && t.block_index <= targets[n - 1].block_index {
                    return Err(Error::config(format!(
                        "target block indices must be strictly increasing ({} after {})",
                        t.block_index,
                        targets[n - 1].block_index
                    )));
                }
                let block = ir.get(t.block_index).ok_or_else(|| {
                    Error::config(format!(
                        "target block {} out of range (network has {} blocks)",
                        t.block_index,
                        ir.len()
                    ))
                })?;
                if !block.has_expand() {
                    return Err(Error::config(format!(
                        "unsupported target: block {} has no pointwise expansion",
                        t.block_index
                    )));
                }
                set_temporal(
                    &mut out,
                    PointwiseSlot::Expand(t.block_index),
                    TemporalConv { kernel: t.temporal_kernel, stride: t.temporal_stride },
                )?;
                kernels.push(t.temporal_kernel);
            }
        }
        InflationMode::LastKPointwise { k, temporal_kernel, temporal_stride, strided_positions } => {
            let mut slots = Vec::new();
            for ir in net.ir_blocks() {
                if ir.has_expand() {
                    slots.push(PointwiseSlot::Expand(ir.index));
                }
                slots.push(PointwiseSlot::Project(ir.index));
            }
            slots.push(PointwiseSlot::Head);
            if *k > slots.len() {
                return Err(Error::config(format!(
                    "cannot inflate the last {k} pointwise convolutions of a network with {}",
                    slots.len()
                )));
            }
            for (n, p) in strided_positions.iter().enumerate() {
                if *p == 0 || *p > *k || (n > 0 && *p <= strided_positions[n - 1]) {
                    return Err(Error::config(format!(
                        "strided positions {strided_positions:?} must be strictly increasing within 1..={k}"
                    )));
                }
            }
            for (pos, slot) in slots[slots.len() - k..].iter().enumerate() {
                let stride = if strided_positions.contains(&(pos + 1)) { *temporal_stride } else { 1 };
                set_temporal(&mut out, *slot, TemporalConv { kernel: *temporal_kernel, stride })?;
                kernels.push(*temporal_kernel);
            }
        }
    }
    if spec.recipe.is_some() && kernels.iter().any(|k| *k != 3) {
        log::warn!("inflation claims recipe {:?} but uses temporal kernels {kernels:?} (recipe uses 3)", spec.recipe);
    }
    out.validate()?;
    if spec.freeze_before_first {
        out.trainable = trainability_mask(&out, Trainability::FreezeBeforeFirstInflated)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainability {
    All,
    None,
    /// Freeze every parameterized layer before the first inflated one.
    FreezeBeforeFirstInflated,
    /// Train only the final `k` parameterized layers.
    LastK(usize),
}

/// Per-layer trainability flags, in [`NetworkSpec::layers`] order.
pub fn trainability_mask(net: &NetworkSpec, policy: Trainability) -> Result<Vec<bool>> {
    let layers = net.layers();
    let n = layers.len();
    let flags = match policy {
        Trainability::All => vec![true; n],
        Trainability::None => vec![false; n],
        Trainability::FreezeBeforeFirstInflated => match layers.iter().position(|l| l.is_inflated()) {
            Some(first) => (0..n).map(|i| i >= first).collect(),
            None => {
                log::warn!("network has no inflated layer; nothing frozen");
                vec![true; n]
            }
        },
        Trainability::LastK(k) => {
            if k > n {
                return Err(Error::config(format!("last {k} layers requested, network has {n}")));
            }
            (0..n).map(|i| i >= n - k).collect()
        }
    };
    log::debug!("{} of {n} parameterized layers trainable", flags.iter().filter(|f| **f).count());
    Ok(flags)
}

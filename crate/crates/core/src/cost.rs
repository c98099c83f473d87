//! Multiply-accumulate accounting per layer and per second of input stream.
//!
//! A convolution execution produces one output frame and costs
//! `out_elements * (in_ch / groups) * kh * kw * kt` MACs, padding taps
//! included; the classifier costs `in * out`. Each layer is billed at its
//! execution rate, the input rate divided by every temporal stride up to and
//! including its own. Activations and residual adds are element operations,
//! reported separately.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::netspec::{shape_trace, BlockSpec, LayerDesc, LayerKind, LayerRole, NetworkSpec};

/// Published stream cost of the inflated EfficientNet variant, GMACs/s.
pub const REFERENCE_SI_EN_GMACS: f64 = 4.0;
/// Published stream cost of the inflated BlazePose variant, GMACs/s. Kept for
/// comparison only; that backbone is not part of this crate.
pub const REFERENCE_SI_BLAZEPOSE_GMACS: f64 = 6.7;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    pub id: usize,
    pub name: String,
    pub role: LayerRole,
    /// MACs of one execution (one output frame).
    pub macs: u64,
    /// Executions per second.
    pub rate: f64,
    pub macs_per_second: f64,
    /// Activation and residual-add element operations of one execution.
    pub element_ops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceCosts {
    pub si_en_gmacs_per_second: f64,
    pub si_blazepose_gmacs_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub network: String,
    pub input_fps: f64,
    pub layers: Vec<LayerCost>,
    pub total_macs_per_second: f64,
    pub gmacs_per_second: f64,
    pub element_ops_per_second: f64,
    /// MACs of one pass over a single frame with every layer executing.
    pub macs_per_frame: u64,
    pub reference: ReferenceCosts,
}

/// MACs of a single execution of `layer` given its input `(H, W)`.
pub fn layer_macs(layer: &LayerDesc, input_hw: (usize, usize)) -> Result<u64> {
    match layer.kind {
        LayerKind::Conv(g) => {
            let plan = g
                .plan(input_hw.0, input_hw.1)
                .map_err(|e| Error::contract(format!("layer {} ({}): {e}", layer.id, layer.name())))?;
            let out_elems = (g.out_ch * plan.out_h * plan.out_w) as u64;
            Ok(out_elems * (g.in_per_group() * g.kh * g.kw * g.kt) as u64)
        }
        LayerKind::Linear { in_features, out_features } => Ok((in_features * out_features) as u64),
    }
}

/// Cost of streaming `net` at `fps` input frames per second.
pub fn per_second_cost(net: &NetworkSpec, fps: f64) -> Result<CostReport> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::config(format!("input fps {fps} must be positive")));
    }
    let mut net = net.clone();
    net.input.fps = fps;
    let trace = shape_trace(&net, 1)?;
    let skip_blocks: Vec<usize> = net
        .blocks
        .iter()
        .filter_map(|b| match b {
            BlockSpec::InvertedResidual(ir) if ir.skip => Some(ir.index),
            _ => None,
        })
        .collect();
    let mut layers = Vec::with_capacity(trace.len());
    for (l, s) in net.layers().iter().zip(&trace) {
        let macs = layer_macs(l, (s.input.2, s.input.3))?;
        let out_elems = (s.output.0 * s.output.2 * s.output.3) as u64;
        let mut element_ops = if l.relu6 { out_elems } else { 0 };
        if l.role == LayerRole::Project && l.block.is_some_and(|b| skip_blocks.contains(&b)) {
            element_ops += out_elems;
        }
        layers.push(LayerCost {
            id: l.id,
            name: l.name(),
            role: l.role,
            macs,
            rate: s.rate_out,
            macs_per_second: macs as f64 * s.rate_out,
            element_ops,
        });
    }
    let total: f64 = layers.iter().map(|l| l.macs_per_second).sum();
    Ok(CostReport {
        network: net.name.clone(),
        input_fps: fps,
        element_ops_per_second: layers.iter().map(|l| l.element_ops as f64 * l.rate).sum(),
        macs_per_frame: layers.iter().map(|l| l.macs).sum(),
        total_macs_per_second: total,
        gmacs_per_second: total / 1e9,
        layers,
        reference: ReferenceCosts {
            si_en_gmacs_per_second: REFERENCE_SI_EN_GMACS,
            si_blazepose_gmacs_per_second: REFERENCE_SI_BLAZEPOSE_GMACS,
        },
    })
}

impl CostReport {
    /// Human-readable per-layer table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} {:<22} {:>14} {:>8} {:>16}", "id", "layer", "MACs/exec", "exec/s", "MACs/s");
        for l in &self.layers {
            let _ =
                writeln!(s, "{:<4} {:<22} {:>14} {:>8.3} {:>16.0}", l.id, l.name, l.macs, l.rate, l.macs_per_second);
        }
        let _ = writeln!(
            s,
            "total {:.4} GMACs/s at {} fps (reference: {} GMACs/s inflated EfficientNet, {} GMACs/s inflated BlazePose)",
            self.gmacs_per_second,
            self.input_fps,
            self.reference.si_en_gmacs_per_second,
            self.reference.si_blazepose_gmacs_per_second
        );
        s
    }
}

use serde::Serialize;

use super::{LayerKind, LayerRole, NetworkSpec};
use crate::error::Result;
use crate::tensor::HeadKind;

/// Resolved shapes and rates of one parameterized layer. Shapes are `(C, T, H, W)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerShape {
    pub id: usize,
    pub name: String,
    pub role: LayerRole,
    pub input: (usize, usize, usize, usize),
    pub output: (usize, usize, usize, usize),
    /// Frames per second arriving at the layer.
    pub rate_in: f64,
    /// Executions per second (output frames per second).
    pub rate_out: f64,
    pub kt: usize,
    pub temporal_stride: usize,
}

/// Trace every layer for a clip of `frames` frames at the declared input rate.
pub fn shape_trace(net: &NetworkSpec, frames: usize) -> Result<Vec<LayerShape>> {
    net.validate()?;
    let (_, head_kind, _) = net.head();
    let mut c = net.input.channels;
    let (mut t, mut h, mut w) = (frames, net.input.height, net.input.width);
    let mut rate = net.input.fps;
    let mut out = Vec::new();
    for l in net.layers() {
        let input = (c, t, h, w);
        let rate_in = rate;
        let (kt, stride) = match l.kind {
            LayerKind::Conv(g) => {
                let plan = g.plan(h, w)?;
                c = g.out_ch;
                t = g.out_len(t);
                (h, w) = (plan.out_h, plan.out_w);
                rate /= g.temporal_stride as f64;
                (g.kt, g.temporal_stride)
            }
            LayerKind::Linear { out_features, .. } => {
                c = out_features;
                (h, w) = (1, 1);
                if head_kind == HeadKind::ClipSoftmax {
                    t = t.min(1);
                }
                (1, 1)
            }
        };
        out.push(LayerShape {
            id: l.id,
            name: l.name(),
            role: l.role,
            input,
            output: (c, t, h, w),
            rate_in,
            rate_out: rate,
            kt,
            temporal_stride: stride,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{build_reference_backbone, inflate, InflationSpec, REFERENCE_TABLE};

    #[test]
    fn si_en_rates() {
        let net = inflate(&build_reference_backbone(REFERENCE_TABLE).unwrap(), &InflationSpec::si_en()).unwrap();
        let trace = shape_trace(&net, 63).unwrap();
        let layers = net.layers();
        let b14 = layers.iter().find(|l| l.block == Some(14) && l.role == LayerRole::Expand).unwrap().id;
        for s in &trace[b14..] {
            assert_eq!(s.rate_out, 4.0, "{}", s.name);
        }
        let b7 = layers.iter().find(|l| l.block == Some(7) && l.role == LayerRole::Expand).unwrap().id;
        for s in &trace[..b7] {
            assert_eq!(s.rate_out, 16.0, "{}", s.name);
        }
        let head = trace.iter().find(|s| s.role == LayerRole::HeadConv).unwrap();
        assert_eq!(head.output.1, 16);
    }

    #[test]
    fn uninflated_runs_at_input_rate() {
        let net = build_reference_backbone(REFERENCE_TABLE).unwrap();
        assert!(shape_trace(&net, 16).unwrap().iter().all(|s| s.rate_out == 16.0));
    }

    #[test]
    fn trace_is_deterministic() {
        let net = build_reference_backbone(REFERENCE_TABLE).unwrap();
        assert_eq!(shape_trace(&net, 5).unwrap(), shape_trace(&net, 5).unwrap());
    }
}

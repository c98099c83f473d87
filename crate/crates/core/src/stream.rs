//! Frame-by-frame executor.
//!
//! Each inflated convolution keeps a ring buffer of its last `kt - 1` input
//! frames, and each layer keeps a phase counter over its temporal stride.
//! A strided layer fires on phase 0 only, so every layer downstream of it
//! runs at the decimated rate. Outputs match [`Model::run_offline`] exactly.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadState, LayerStats, Model};
use crate::netspec::Op;
use crate::tensor::Frames;

/// One emitted output step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput {
    /// Index of the input frame that triggered this output.
    pub frame_index: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StreamSession<'m> {
    model: &'m Model,
    /// Per layer: last `kt - 1` input frames, oldest first (empty for kt = 1).
    rings: Vec<VecDeque<Vec<f64>>>,
    /// Per layer: frames seen modulo the temporal stride.
    phases: Vec<usize>,
    /// Per layer: input `(H, W)`.
    dims: Vec<(usize, usize)>,
    head: HeadState,
    frames_consumed: usize,
    outputs_emitted: usize,
    stats: LayerStats,
}

impl<'m> StreamSession<'m> {
    pub fn open(model: &'m Model) -> Result<Self> {
        let spec = model.spec();
        if !(spec.input.fps > 0.0) {
            return Err(Error::config("network has no input frame rate"));
        }
        let dims = spec.spatial_trace()?;
        let n = model.layers().len();
        let mut session = Self {
            model,
            rings: vec![VecDeque::new(); n],
            phases: vec![0; n],
            dims,
            head: HeadState::new(model.classifier.in_features),
            frames_consumed: 0,
            outputs_emitted: 0,
            stats: LayerStats::new(n),
        };
        session.reset();
        Ok(session)
    }

    /// Return to the causal-padding state: zero history, phase 0, no counts.
    pub fn reset(&mut self) {
        for (id, conv) in self.model.convs.iter().enumerate() {
            let (h, w) = self.dims[id];
            let zero = vec![0.0; conv.geom.in_ch * h * w];
            self.rings[id] = std::iter::repeat_n(zero, conv.geom.kt - 1).collect();
        }
        self.phases.iter_mut().for_each(|p| *p = 0);
        self.head = HeadState::new(self.model.classifier.in_features);
        self.frames_consumed = 0;
        self.outputs_emitted = 0;
        self.stats = LayerStats::new(self.model.layers().len());
    }

    pub fn ring_buffer_count(&self) -> usize {
        self.rings.iter().filter(|r| !r.is_empty()).count()
    }

    pub fn ring_lengths(&self) -> Vec<usize> {
        self.rings.iter().map(VecDeque::len).collect()
    }

    pub fn phases(&self) -> &[usize] {
        &self.phases
    }

    pub fn frames_consumed(&self) -> usize {
        self.frames_consumed
    }

    pub fn outputs_emitted(&self) -> usize {
        self.outputs_emitted
    }

    pub fn stats(&self) -> &LayerStats {
        &self.stats
    }

    /// Feed one `[C, H, W]` frame. Returns an output when the final stride
    /// phase fires (the first one at frame 0).
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Option<StreamOutput>> {
        let model = self.model;
        model.check_frame(frame, self.frames_consumed)?;
        let frame_index = self.frames_consumed;
        self.frames_consumed += 1;

        let mut cur = frame.to_vec();
        let mut skips: Vec<Vec<f64>> = Vec::new();
        for op in model.program() {
            match *op {
                Op::Conv(id) => {
                    let conv = &model.convs[id];
                    let (h, w) = self.dims[id];
                    let stride = conv.geom.temporal_stride;
                    let fire = self.phases[id] == 0;
                    self.phases[id] = (self.phases[id] + 1) % stride;
                    let out = if fire {
                        let ring = &self.rings[id];
                        let mut taps: Vec<&[f64]> = ring.iter().map(Vec::as_slice).collect();
                        taps.push(&cur);
                        let mut macs = 0;
                        let mut out = conv.forward_frame(&taps, h, w, &mut macs);
                        model.finish_layer(id, &mut out);
                        self.stats.executions[id] += 1;
                        self.stats.macs[id] += macs;
                        Some(out)
                    } else {
                        None
                    };
                    let ring = &mut self.rings[id];
                    if !ring.is_empty() {
                        ring.pop_front();
                        ring.push_back(cur);
                    }
                    match out {
                        Some(o) => cur = o,
                        None => return Ok(None),
                    }
                }
                Op::SaveSkip => skips.push(cur.clone()),
                Op::AddSkip => {
                    let src = skips.pop().expect("balanced skip ops");
                    for (v, s) in cur.iter_mut().zip(&src) {
                        *v = model.dtype().round(*v + s);
                    }
                }
            }
        }
        let channels = model.classifier.in_features;
        let pooled = model.pool(&cur, channels);
        let probabilities = self.head.step(model, &pooled, Some(&mut self.stats))?;
        self.outputs_emitted += 1;
        Ok(Some(StreamOutput { frame_index, probabilities }))
    }

    /// Push every frame of a clip and collect the outputs.
    pub fn push_clip(&mut self, clip: &Frames) -> Result<Vec<StreamOutput>> {
        let mut out = Vec::new();
        for f in &clip.frames {
            if let Some(o) = self.push_frame(f)? {
                out.push(o);
            }
        }
        Ok(out)
    }
}

/// Offline execution of a whole clip; the reference the stream must match.
pub fn run_offline(model: &Model, clip: &Frames) -> Result<Vec<Vec<f64>>> {
    if clip.is_empty() {
        return Err(Error::contract("offline run over an empty clip"));
    }
    model.run_offline(clip, None)
}

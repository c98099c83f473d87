use rand::seq::SliceRandom;
use rand::Rng;

use super::{Activation, BlockSpec, InputContract, IrBlock, NetworkSpec, TemporalConv};
use crate::tensor::HeadKind;

fn temporal<R: Rng>(rng: &mut R) -> Option<TemporalConv> {
    if rng.gen_bool(0.5) {
        return None;
    }
    Some(TemporalConv { kernel: *[1, 3, 5].choose(rng).expect("non-empty"), stride: rng.gen_range(1..=3) })
}

/// Small random network for property tests: 1-3 inverted-residual blocks,
/// random spatial strides, random temporal kernels and strides on the
/// pointwise convolutions, either head kind.
pub fn random_network<R: Rng>(rng: &mut R) -> NetworkSpec {
    let size = rng.gen_range(4..=10);
    let channels = rng.gen_range(1..=3);
    let stem_out = rng.gen_range(2..=6);
    let mut blocks = vec![BlockSpec::Stem {
        out_ch: stem_out,
        kernel: *[1, 3].choose(rng).expect("non-empty"),
        stride: rng.gen_range(1..=2),
    }];
    let mut ch = stem_out;
    for index in 0..rng.gen_range(1..=3) {
        let expansion_ratio = *[1.0, 2.0, 3.0].choose(rng).expect("non-empty");
        let stride = rng.gen_range(1..=2);
        let out_ch = if rng.gen_bool(0.5) { ch } else { rng.gen_range(2..=6) };
        let expand = expansion_ratio != 1.0;
        blocks.push(BlockSpec::InvertedResidual(IrBlock {
            index,
            expansion_ratio,
            in_ch: ch,
            out_ch,
            kernel: *[1, 3, 5].choose(rng).expect("non-empty"),
            stride,
            skip: out_ch == ch && stride == 1 && rng.gen_bool(0.7),
            activation: Activation::Relu6,
            expand_temporal: if expand { temporal(rng) } else { None },
            project_temporal: temporal(rng),
        }));
        ch = out_ch;
    }
    blocks.push(BlockSpec::Head {
        conv_ch: rng.gen_range(2..=8),
        classifier: if rng.gen_bool(0.5) { HeadKind::TemporalClassifier } else { HeadKind::ClipSoftmax },
        num_classes: rng.gen_range(2..=5),
        temporal: temporal(rng),
    });
    let net = NetworkSpec {
        name: "random".into(),
        input: InputContract { channels, height: size, width: size, fps: 16.0 },
        blocks,
        trainable: Vec::new(),
    };
    debug_assert!(net.validate().is_ok());
    net
}

use serde::{Deserialize, Serialize};

use super::{Activation, BlockSpec, InputContract, IrBlock, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::HeadKind;

/// Shipped EfficientNet-Lite4-style table at 256x256 input.
pub const REFERENCE_TABLE: &str = include_str!("../../data/efficientnet_lite4_256.json");

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StemRow {
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRow {
    pub expansion_ratio: f64,
    pub kernel: usize,
    /// Spatial stride of the first block of the stage; the rest use 1.
    pub stride: usize,
    pub out_ch: usize,
    pub repeats: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadRow {
    pub conv_ch: usize,
    pub classifier: HeadKind,
    pub num_classes: usize,
}

/// Stage-level backbone description, as stored in the data files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackboneTable {
    pub name: String,
    pub version: u32,
    #[serde(default)]
    pub notes: Vec<String>,
    pub input: InputContract,
    pub stem: StemRow,
    pub stages: Vec<StageRow>,
    pub head: HeadRow,
}

/// Expand a stage table into a validated network.
pub fn build_backbone(table: &BackboneTable) -> Result<NetworkSpec> {
    if table.stages.iter().any(|s| s.repeats == 0) {
        return Err(Error::config("stage with zero repeats"));
    }
    let mut blocks =
        vec![BlockSpec::Stem { out_ch: table.stem.out_ch, kernel: table.stem.kernel, stride: table.stem.stride }];
    let mut ch = table.stem.out_ch;
    let mut index = 0;
    for stage in &table.stages {
        for r in 0..stage.repeats {
            let stride = if r == 0 { stage.stride } else { 1 };
            blocks.push(BlockSpec::InvertedResidual(IrBlock {
                index,
                expansion_ratio: stage.expansion_ratio,
                in_ch: ch,
                out_ch: stage.out_ch,
                kernel: stage.kernel,
                stride,
                skip: ch == stage.out_ch && stride == 1,
                activation: Activation::Relu6,
                expand_temporal: None,
                project_temporal: None,
            }));
            ch = stage.out_ch;
            index += 1;
        }
    }
    blocks.push(BlockSpec::Head {
        conv_ch: table.head.conv_ch,
        classifier: table.head.classifier,
        num_classes: table.head.num_classes,
        temporal: None,
    });
    let net = NetworkSpec { name: table.name.clone(), input: table.input, blocks, trainable: Vec::new() };
    net.validate()?;
    Ok(net)
}

/// Parse a JSON stage table and build the network.
pub fn build_reference_backbone(table_json: &str) -> Result<NetworkSpec> {
    let table: BackboneTable = serde_json::from_str(table_json)?;
    build_backbone(&table)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One feature-transformation layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { input: usize, output: usize },
    BatchNorm { dim: usize },
    Relu,
    Sigmoid,
}

impl LayerSpec {
    /// Output width for input width `dim`.
    pub fn output_dim(&self, dim: usize) -> Result<usize> {
        match *self {
            LayerSpec::Linear { input, output } => {
                if input != dim {
                    return Err(Error::Config(format!("linear layer expects width {input}, receives {dim}")));
                }
                Ok(output)
            }
            LayerSpec::BatchNorm { dim: d } => {
                if d != dim {
                    return Err(Error::Config(format!("batch norm expects width {d}, receives {dim}")));
                }
                Ok(dim)
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(dim),
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::BatchNorm { .. })
    }
}

/// Optional message passing followed by a stack of layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(default = "yes")]
    pub message_passing: bool,
    pub layers: Vec<LayerSpec>,
}

fn yes() -> bool {
    true
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Node-level output, one row per node.
    None,
    /// Graph-level output: node rows are summed.
    #[default]
    Sum,
}

/// The public model architecture shared with clients and parties.
///
/// Block outputs are either concatenated (`concat`) or only the last is
/// kept; the readout then pools node rows and the head maps to classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Clients add one self-loop per node before batching.
    #[serde(default)]
    pub self_loops: bool,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub concat: bool,
    #[serde(default)]
    pub readout: Readout,
    pub head: Vec<LayerSpec>,
}

/// A layer placed in the architecture, with its global index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacedLayer {
    pub id: u32,
    pub spec: LayerSpec,
    pub input_dim: usize,
    /// Whether the layer runs on pooled rows (after the readout).
    pub pooled: bool,
}

impl Architecture {
    /// GIN with `blocks` blocks of `[MPL, Linear, BatchNorm, ReLU, Linear,
    /// ReLU]`, concatenated block outputs, sum readout and a two-layer head.
    pub fn gin(input_dim: usize, hidden: usize, classes: usize, blocks: usize) -> Self {
        let block = |input: usize| BlockSpec {
            message_passing: true,
            layers: vec![
                LayerSpec::Linear { input, output: hidden },
                LayerSpec::BatchNorm { dim: hidden },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    input: hidden,
                    output: hidden,
                },
                LayerSpec::Relu,
            ],
        };
        Architecture {
            input_dim,
            self_loops: true,
            blocks: (0..blocks).map(|b| block(if b == 0 { input_dim } else { hidden })).collect(),
            concat: true,
            readout: Readout::Sum,
            head: vec![
                LayerSpec::Linear {
                    input: hidden * blocks,
                    output: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    input: hidden,
                    output: classes,
                },
            ],
        }
    }

    /// Checks the width chain and returns the class count.
    pub fn validate(&self) -> Result<usize> {
        if self.input_dim == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("architecture has no blocks".into()));
        }
        let mut dim = self.input_dim;
        let mut concat = 0;
        for block in &self.blocks {
            for layer in &block.layers {
                dim = layer.output_dim(dim)?;
            }
            concat += dim;
        }
        let mut dim = if self.concat { concat } else { dim };
        for layer in &self.head {
            dim = layer.output_dim(dim)?;
        }
        if dim == 0 {
            return Err(Error::Config("model has no outputs".into()));
        }
        Ok(dim)
    }

    pub fn classes(&self) -> Result<usize> {
        self.validate()
    }

    /// Input width of every message-passing layer, in execution order.
    pub fn mpl_widths(&self) -> Vec<usize> {
        let mut dim = self.input_dim;
        let mut out = Vec::new();
        for block in &self.blocks {
            if block.message_passing {
                out.push(dim);
            }
            for layer in &block.layers {
                dim = layer.output_dim(dim).unwrap_or(dim);
            }
        }
        out
    }

    /// Every layer with its global id and input width, in execution order.
    pub fn placed_layers(&self) -> Vec<PlacedLayer> {
        let mut out = Vec::new();
        let mut dim = self.input_dim;
        let mut concat = 0;
        for block in &self.blocks {
            for spec in &block.layers {
                out.push(PlacedLayer {
                    id: out.len() as u32,
                    spec: spec.clone(),
                    input_dim: dim,
                    pooled: false,
                });
                dim = spec.output_dim(dim).unwrap_or(dim);
            }
            concat += dim;
        }
        let mut dim = if self.concat { concat } else { dim };
        let pooled = self.readout == Readout::Sum;
        for spec in &self.head {
            out.push(PlacedLayer {
                id: out.len() as u32,
                spec: spec.clone(),
                input_dim: dim,
                pooled,
            });
            dim = spec.output_dim(dim).unwrap_or(dim);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let arch: Architecture = serde_json::from_str(text)?;
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gin_dimensions() {
        let arch = Architecture::gin(7, 16, 3, 3);
        assert_eq!(arch.validate().unwrap(), 3);
        assert_eq!(arch.mpl_widths(), vec![7, 16, 16]);
        let placed = arch.placed_layers();
        assert_eq!(placed.len(), 18);
        assert_eq!(placed[15].input_dim, 48);
        assert!(placed[15].pooled);
        assert!(!placed[14].pooled);
    }

    #[test]
    fn json_roundtrip() {
        let arch = Architecture::gin(4, 8, 2, 2);
        let back = Architecture::from_json(&arch.to_json()).unwrap();
        assert_eq!(back, arch);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut arch = Architecture::gin(4, 8, 2, 1);
        arch.head[0] = LayerSpec::Linear { input: 9, output: 8 };
        assert!(arch.validate().is_err());
    }
}

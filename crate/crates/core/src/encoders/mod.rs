//! Graph encoder over sampled views and the sequence encoders that produce
//! the sequential patterns `Z`.

mod gru;
mod lightgcn;
mod transformer;

pub use gru::{gru_forward, GruWeights};
pub use lightgcn::{lightgcn_forward, view_adjacency, GraphEncoderConfig, LightGcnOutput};
pub use transformer::{transformer_forward, AttentionHead, BlockWeights, TransformerWeights};

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Transformer,
    Gru,
}

impl std::str::FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transformer" => Ok(Backbone::Transformer),
            "gru" => Ok(Backbone::Gru),
            other => Err(format!("unknown backbone {other:?}")),
        }
    }
}

impl std::fmt::Display for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backbone::Transformer => "transformer",
            Backbone::Gru => "gru",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqEncoderConfig {
    pub backbone: Backbone,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub max_len: usize,
}

impl Default for SeqEncoderConfig {
    fn default() -> Self {
        SeqEncoderConfig {
            backbone: Backbone::Transformer,
            dim: 64,
            heads: 2,
            blocks: 1,
            max_len: 50,
        }
    }
}

/// Row mask repeated across `cols` columns: true where the row is padding.
pub(crate) fn padding_fill_mask(mask: &[bool], cols: usize) -> Vec<bool> {
    mask.iter().flat_map(|&valid| std::iter::repeat_n(!valid, cols)).collect()
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeFeatures;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Message width.
    pub d_m: usize,
    /// Latent width; must be even.
    pub d_z: usize,
    pub heads: usize,
    pub l_enc: usize,
    pub l_dec: usize,
    /// Node feature channels of the input graphs.
    pub node_features: usize,
    pub edge_features: EdgeFeatures,
    /// SoftSort temperature.
    pub tau: f64,
    /// Support of the node-count head.
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_m: 64,
            d_z: 32,
            heads: 4,
            l_enc: 4,
            l_dec: 4,
            node_features: 1,
            edge_features: EdgeFeatures::default(),
            tau: 1.0,
            n_min: 1,
            n_max: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d_m == 0 || self.heads == 0 || self.d_m % self.heads != 0 {
            return fail(format!("d_m={} must be a positive multiple of heads={}", self.d_m, self.heads));
        }
        if self.d_z == 0 || self.d_z % 2 != 0 {
            return fail(format!("d_z={} must be positive and even", self.d_z));
        }
        if self.node_features == 0 {
            return fail("node_features must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau={} must be positive", self.tau));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return fail(format!("bad node-count support [{}, {}]", self.n_min, self.n_max));
        }
        Ok(())
    }

    /// Encoder node input width: features plus the embedding-node type channel.
    pub fn d_v_in(&self) -> usize {
        self.node_features + 1
    }

    /// Encoder edge input width: edge features plus the embedding-edge type channel.
    pub fn d_e_in(&self) -> usize {
        self.edge_features.width() + 1
    }

    /// Node classes predicted by the decoder.
    pub fn d_v_out(&self) -> usize {
        self.node_features
    }

    /// Width of one position embedding; two of them are concatenated per message.
    pub fn d_pe(&self) -> usize {
        self.d_z / 2
    }

    pub fn d_ff(&self) -> usize {
        2 * self.d_m
    }

    pub fn count_classes(&self) -> usize {
        self.n_max - self.n_min + 1
    }
}

//! Multi-head factorized attention (MHFA) back-end.
//!
//! Two learned softmax layer weightings build a key stream and a value stream
//! from the `L × T × D` features. Keys are compressed and scored by `H`
//! learned query columns; the resulting per-head attention over time pools the
//! compressed values. The `H` pooled vectors are concatenated, projected to an
//! embedding and classified as spoof (index 0) or bonafide (index 1).

mod checkpoint;
mod model;
mod params;
mod selfcheck;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{
    aggregate_layers, bind_params, classify, forward_utterance, mhfa_forward, nll_loss, pool_utterance, stack_rows,
    value_stream, Outputs, ParamVars,
};
pub use params::{MhfaParams, ParamGroup};
pub use selfcheck::{grad_check_config, model_grad_check};

use crate::dsu::DsuConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhfaConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub compression_dim: usize,
    pub embed_dim: usize,
    pub dsu_enabled: bool,
    pub dsu: DsuConfig,
    pub adapter_enabled: bool,
}

impl Default for MhfaConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            dim: 128,
            heads: 32,
            compression_dim: 128,
            embed_dim: 256,
            dsu_enabled: false,
            dsu: DsuConfig::default(),
            adapter_enabled: true,
        }
    }
}

impl MhfaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("compression_dim", self.compression_dim),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        self.dsu.validate()
    }
}

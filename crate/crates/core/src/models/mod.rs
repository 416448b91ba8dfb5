//! The three GIN-Virtual weak learners: plain, Bayesian readout, and DiffPool.

mod batch;
mod forward;
mod layers;
mod params;

pub use batch::{build_batch, GraphBatch};
pub use forward::{
    forward, forward_gin_virtual, forward_gin_virtual_bnn, forward_gin_virtual_diffpool,
    predict_batch, ModelOutput,
};
pub use layers::{
    bayes_linear, diffpool_coarsen, gin_layer, trunk, virtual_node_exchange, Coarsened, Session,
};
pub use params::{count_params, inverse_softplus, ModelParams};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::ChemError;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("batch contains no graphs")]
    EmptyBatch,
    #[error("graph {0} of the batch has no atoms")]
    EmptyGraph(usize),
    #[error("featurization failed: {0}")]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("parameter `{0}` is missing")]
    MissingTensor(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("expected variant {expected}, found {found}")]
    VariantMismatch { expected: Variant, found: Variant },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GinVirtual,
    GinVirtualBnn,
    GinVirtualDiffpool,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::GinVirtual,
        Variant::GinVirtualBnn,
        Variant::GinVirtualDiffpool,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GinVirtual => "gin_virtual",
            Variant::GinVirtualBnn => "gin_virtual_bnn",
            Variant::GinVirtualDiffpool => "gin_virtual_diffpool",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                format!("unknown variant `{s}` (expected gin_virtual, gin_virtual_bnn or gin_virtual_diffpool)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnnConfig {
    /// Widths of the hidden Bayesian layers between the graph embedding and the output.
    pub hidden: Vec<usize>,
    pub prior_sigma: f64,
    /// Weight of the KL term, further divided by the number of batches per epoch.
    pub kl_weight: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 32],
            prior_sigma: 1.0,
            kl_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffPoolConfig {
    pub num_supernodes: usize,
    /// Adds the link-prediction and assignment-entropy regularizers to the loss.
    pub aux_loss: bool,
}

impl Default for DiffPoolConfig {
    fn default() -> Self {
        Self {
            num_supernodes: 5,
            aux_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub latent_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    /// Hidden width of the GIN and virtual-node MLPs, as a multiple of `latent_dim`.
    pub mlp_hidden_factor: usize,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub bnn: BnnConfig,
    pub diffpool: DiffPoolConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::GinVirtual,
            latent_dim: 600,
            num_layers: 5,
            dropout: 0.0,
            mlp_hidden_factor: 1,
            clamp_lo: 0.0,
            clamp_hi: 50.0,
            bnn: BnnConfig::default(),
            diffpool: DiffPoolConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, latent_dim: usize, num_layers: usize) -> Self {
        Self {
            variant,
            latent_dim,
            num_layers,
            ..Self::default()
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        self.latent_dim * self.mlp_hidden_factor
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.latent_dim == 0 {
            return fail("latent_dim must be at least 1");
        }
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1");
        }
        if self.mlp_hidden_factor == 0 {
            return fail("mlp_hidden_factor must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.clamp_lo < self.clamp_hi) {
            return fail("clamp_lo must be below clamp_hi");
        }
        if self.diffpool.num_supernodes == 0 {
            return fail("num_supernodes must be at least 1");
        }
        if !(self.bnn.prior_sigma > 0.0) {
            return fail("prior_sigma must be positive");
        }
        if self.bnn.hidden.contains(&0) {
            return fail("bnn hidden widths must be positive");
        }
        if !(self.bnn.kl_weight >= 0.0) {
            return fail("kl_weight must be non-negative");
        }
        Ok(())
    }
}

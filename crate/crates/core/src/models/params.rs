use std::collections::BTreeMap;

use rand::Rng;

use crate::chem::{ATOM_VOCAB_SIZES, BOND_VOCAB_SIZES};
use crate::numerics::{BatchNormState, Tensor};

use super::{ModelConfig, ModelError, Variant};

const EMBED_RANGE: f64 = 0.1;
const INITIAL_SIGMA: f64 = 0.05;

/// Named trainable tensors plus non-trainable batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

/// `softplus⁻¹(y) = ln(eʸ − 1)`.
pub fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Total number of trainable scalars (running statistics excluded).
pub fn count_params(params: &ModelParams) -> usize {
    params.tensors.values().map(Tensor::len).sum()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

struct Builder<'r, R: ?Sized> {
    params: ModelParams,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn tensor(&mut self, name: String, t: Tensor) {
        self.params.tensors.insert(name, t);
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform(self.rng, &[fan_in, fan_out], bound);
        let b = uniform(self.rng, &[fan_out], bound);
        self.tensor(format!("{prefix}.weight"), w);
        self.tensor(format!("{prefix}.bias"), b);
    }

    fn batch_norm(&mut self, prefix: &str, dim: usize) {
        self.tensor(format!("{prefix}.gamma"), Tensor::full(&[dim], 1.0));
        self.tensor(format!("{prefix}.beta"), Tensor::zeros(&[dim]));
        let state = BatchNormState::new(dim);
        self.params.buffers.insert(
            format!("{prefix}.running_mean"),
            Tensor::vector(state.running_mean),
        );
        self.params.buffers.insert(
            format!("{prefix}.running_var"),
            Tensor::vector(state.running_var),
        );
    }

    fn embedding(&mut self, name: String, vocab: usize, dim: usize) {
        let t = uniform(self.rng, &[vocab, dim], EMBED_RANGE);
        self.tensor(name, t);
    }

    fn bayes_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rho = inverse_softplus(INITIAL_SIGMA);
        let wm = uniform(self.rng, &[fan_in, fan_out], bound);
        let bm = uniform(self.rng, &[fan_out], bound);
        self.tensor(format!("{prefix}.weight_mu"), wm);
        self.tensor(format!("{prefix}.weight_rho"), Tensor::full(&[fan_in, fan_out], rho));
        self.tensor(format!("{prefix}.bias_mu"), bm);
        self.tensor(format!("{prefix}.bias_rho"), Tensor::full(&[fan_out], rho));
    }
}

impl ModelParams {
    /// Randomly initialized parameters for `config`.
    ///
    /// Linear layers draw from U(±1/√fan_in), embeddings from U(±0.1); GIN ε
    /// and the virtual-node initial state start at zero and Bayesian ρ at
    /// softplus⁻¹(0.05).
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.latent_dim;
        let hidden = config.mlp_hidden();
        let mut b = Builder {
            params: ModelParams::default(),
            rng,
        };

        for (f, &vocab) in ATOM_VOCAB_SIZES.iter().enumerate() {
            b.embedding(format!("atom_embed.{f}"), vocab, d);
        }
        for l in 0..config.num_layers {
            for (f, &vocab) in BOND_VOCAB_SIZES.iter().enumerate() {
                b.embedding(format!("layers.{l}.bond_embed.{f}"), vocab, d);
            }
            b.tensor(format!("layers.{l}.eps"), Tensor::zeros(&[1]));
            b.linear(&format!("layers.{l}.mlp.lin1"), d, hidden);
            b.batch_norm(&format!("layers.{l}.mlp.bn"), hidden);
            b.linear(&format!("layers.{l}.mlp.lin2"), hidden, d);
            b.batch_norm(&format!("layers.{l}.bn"), d);
        }
        b.tensor("virtual.init".to_string(), Tensor::zeros(&[1, d]));
        for l in 0..config.num_layers - 1 {
            b.linear(&format!("virtual.{l}.lin1"), d, hidden);
            b.batch_norm(&format!("virtual.{l}.bn1"), hidden);
            b.linear(&format!("virtual.{l}.lin2"), hidden, d);
            b.batch_norm(&format!("virtual.{l}.bn2"), d);
        }

        match config.variant {
            Variant::GinVirtual => b.linear("readout", d, 1),
            Variant::GinVirtualBnn => {
                let mut fan_in = d;
                for (i, &w) in config.bnn.hidden.iter().chain(&[1]).enumerate() {
                    b.bayes_linear(&format!("bayes.{i}"), fan_in, w);
                    fan_in = w;
                }
            }
            Variant::GinVirtualDiffpool => {
                let k = config.diffpool.num_supernodes;
                b.linear("diffpool.assign", d, k);
                b.tensor("diffpool.eps".to_string(), Tensor::zeros(&[1]));
                b.linear("diffpool.mlp.lin1", d, d);
                b.linear("diffpool.mlp.lin2", d, d);
                b.linear("readout", 2 * d, 1);
            }
        }
        Ok(b.params)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))
    }

    pub fn batch_norm_state(&self, prefix: &str) -> Result<BatchNormState, ModelError> {
        let get = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            self.buffers
                .get(&name)
                .map(|t| t.data().to_vec())
                .ok_or(ModelError::MissingTensor(name))
        };
        Ok(BatchNormState {
            running_mean: get("running_mean")?,
            running_var: get("running_var")?,
        })
    }

    pub fn set_batch_norm_state(&mut self, prefix: &str, state: BatchNormState) {
        self.buffers.insert(
            format!("{prefix}.running_mean"),
            Tensor::vector(state.running_mean),
        );
        self.buffers.insert(
            format!("{prefix}.running_var"),
            Tensor::vector(state.running_var),
        );
    }

    /// Whether `name` is a running statistic rather than a trainable tensor.
    pub fn is_buffer_name(name: &str) -> bool {
        name.ends_with(".running_mean") || name.ends_with(".running_var")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }
}

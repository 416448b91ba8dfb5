use std::collections::BTreeMap;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::chem::{ATOM_VOCAB_SIZES, BOND_VOCAB_SIZES};
use crate::numerics::{BatchNormState, Mode, Tape, Tensor, Var};

use super::{GraphBatch, ModelConfig, ModelError, ModelParams};

/// One forward pass: a tape plus lazily registered parameter leaves.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
    params: &'a ModelParams,
    vars: BTreeMap<String, Var>,
    stat_updates: Vec<(String, BatchNormState)>,
}

impl<'a> Session<'a> {
    pub fn new(
        tape: &'a mut Tape,
        params: &'a ModelParams,
        mode: Mode,
        rng: &'a mut dyn RngCore,
    ) -> Self {
        Self {
            tape,
            mode,
            rng,
            params,
            vars: BTreeMap::new(),
            stat_updates: Vec::new(),
        }
    }

    /// The leaf for parameter `name`, registered on first use.
    pub fn param(&mut self, name: &str) -> Result<Var, ModelError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.params.tensor(name)?.clone();
        let v = self.tape.param(value);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters touched so far, by name.
    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Running-statistic updates collected in train mode, keyed by layer prefix.
    pub fn take_stat_updates(&mut self) -> Vec<(String, BatchNormState)> {
        std::mem::take(&mut self.stat_updates)
    }

    /// `x·W + b` with `{prefix}.weight` and `{prefix}.bias`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_row(y, b)?)
    }

    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let state = self.params.batch_norm_state(prefix)?;
        let (y, updated) = self.tape.batch_norm(x, gamma, beta, &state, self.mode)?;
        if let Some(updated) = updated {
            self.stat_updates.push((prefix.to_string(), updated));
        }
        Ok(y)
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, ModelError> {
        if self.mode == Mode::Eval || rate <= 0.0 {
            return Ok(x);
        }
        Ok(self.tape.dropout(x, rate, &mut *self.rng)?)
    }

    fn relu(&mut self, x: Var) -> Result<Var, ModelError> {
        Ok(self.tape.relu(x)?)
    }

    /// `linear → batch_norm → relu → linear`.
    fn gin_mlp(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let h = self.linear(x, &format!("{prefix}.lin1"))?;
        let h = self.batch_norm(h, &format!("{prefix}.bn"))?;
        let h = self.relu(h)?;
        self.linear(h, &format!("{prefix}.lin2"))
    }

    /// `(1 + ε)·x` for the one-element parameter `eps_name`.
    fn one_plus_eps(&mut self, x: Var, eps_name: &str) -> Result<Var, ModelError> {
        let eps = self.param(eps_name)?;
        let scaled = self.tape.scale(x, eps)?;
        Ok(self.tape.add(x, scaled)?)
    }
}

/// Sum of the per-field atom embeddings, `N×d`.
fn embed_atoms(sess: &mut Session, batch: &GraphBatch) -> Result<Var, ModelError> {
    let mut h: Option<Var> = None;
    for f in 0..ATOM_VOCAB_SIZES.len() {
        let table = sess.param(&format!("atom_embed.{f}"))?;
        let e = sess.tape.embedding_lookup(table, &batch.atom_column(f))?;
        h = Some(match h {
            Some(acc) => sess.tape.add(acc, e)?,
            None => e,
        });
    }
    Ok(h.expect("at least one atom feature"))
}

/// One GIN message-passing layer.
///
/// `m_v = Σ_{u→v} relu(h_u + bond_embed(e_uv))`, then
/// `out = bn(MLP((1 + ε)·h_v + m_v))`, with a relu unless `is_last`.
pub fn gin_layer(
    sess: &mut Session,
    h: Var,
    batch: &GraphBatch,
    layer: usize,
    is_last: bool,
    dropout: f64,
) -> Result<Var, ModelError> {
    let prefix = format!("layers.{layer}");
    let mut edge_embed: Option<Var> = None;
    for f in 0..BOND_VOCAB_SIZES.len() {
        let table = sess.param(&format!("{prefix}.bond_embed.{f}"))?;
        let e = sess.tape.embedding_lookup(table, &batch.bond_column(f))?;
        edge_embed = Some(match edge_embed {
            Some(acc) => sess.tape.add(acc, e)?,
            None => e,
        });
    }
    let edge_embed = edge_embed.expect("at least one bond feature");

    let source = sess.tape.embedding_lookup(h, &batch.edge_src)?;
    let message = sess.tape.add(source, edge_embed)?;
    let message = sess.tape.relu(message)?;
    let aggregated = sess
        .tape
        .segment_sum(message, &batch.edge_dst, batch.num_nodes())?;

    let self_term = sess.one_plus_eps(h, &format!("{prefix}.eps"))?;
    let pre = sess.tape.add(self_term, aggregated)?;
    let out = sess.gin_mlp(pre, &format!("{prefix}.mlp"))?;
    let mut out = sess.batch_norm(out, &format!("{prefix}.bn"))?;
    if !is_last {
        out = sess.relu(out)?;
    }
    sess.dropout(out, dropout)
}

/// Broadcasts each graph's virtual state onto its nodes and, when `update`
/// is set, advances the virtual state with a residual MLP step.
///
/// Returns `(h + vstate[graph_ids], vstate')`.
pub fn virtual_node_exchange(
    sess: &mut Session,
    h: Var,
    vstate: Var,
    batch: &GraphBatch,
    layer: usize,
    update: bool,
    dropout: f64,
) -> Result<(Var, Var), ModelError> {
    let broadcast = sess.tape.embedding_lookup(vstate, &batch.graph_ids)?;
    let h = sess.tape.add(h, broadcast)?;
    if !update {
        return Ok((h, vstate));
    }
    let pooled = sess.tape.segment_sum(h, &batch.graph_ids, batch.num_graphs)?;
    let pooled = sess.tape.add(pooled, vstate)?;
    let prefix = format!("virtual.{layer}");
    let z = sess.linear(pooled, &format!("{prefix}.lin1"))?;
    let z = sess.batch_norm(z, &format!("{prefix}.bn1"))?;
    let z = sess.relu(z)?;
    let z = sess.linear(z, &format!("{prefix}.lin2"))?;
    let z = sess.batch_norm(z, &format!("{prefix}.bn2"))?;
    let z = sess.relu(z)?;
    let z = sess.dropout(z, dropout)?;
    let vstate = sess.tape.add(vstate, z)?;
    Ok((h, vstate))
}

/// Node embeddings after atom embedding and `num_layers` rounds of
/// virtual-node exchange plus GIN message passing.
pub fn trunk(
    sess: &mut Session,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<Var, ModelError> {
    let mut h = embed_atoms(sess, batch)?;
    let init = sess.param("virtual.init")?;
    let mut vstate = sess
        .tape
        .embedding_lookup(init, &vec![0; batch.num_graphs])?;
    let layers = config.num_layers;
    for l in 0..layers {
        let is_last = l + 1 == layers;
        let (h_in, v_next) =
            virtual_node_exchange(sess, h, vstate, batch, l, !is_last, config.dropout)?;
        vstate = v_next;
        h = gin_layer(sess, h_in, batch, l, is_last, config.dropout)?;
    }
    Ok(h)
}

/// Bayes-by-backprop linear layer `x·W + b`.
///
/// Train mode samples `W = μ_W + softplus(ρ_W)⊙ε` (and likewise `b`) with fresh
/// standard-normal `ε`; eval mode uses the means. Also returns the KL
/// divergence of both posteriors to `N(0, prior_sigma²)`.
#[allow(clippy::too_many_arguments)]
pub fn bayes_linear(
    tape: &mut Tape,
    x: Var,
    weight_mu: Var,
    weight_rho: Var,
    bias_mu: Var,
    bias_rho: Var,
    prior_sigma: f64,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(Var, Var), ModelError> {
    let weight_sigma = tape.softplus(weight_rho)?;
    let bias_sigma = tape.softplus(bias_rho)?;
    let (w, b) = match mode {
        Mode::Eval => (weight_mu, bias_mu),
        Mode::Train => {
            let mut sample = |tape: &mut Tape, mu: Var, sigma: Var| -> Result<Var, ModelError> {
                let shape = tape.value(mu)?.shape().to_vec();
                let n = shape.iter().product();
                let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
                let noise = tape.constant(Tensor::new(shape, noise)?);
                let spread = tape.mul(sigma, noise)?;
                Ok(tape.add(mu, spread)?)
            };
            let w = sample(tape, weight_mu, weight_sigma)?;
            let b = sample(tape, bias_mu, bias_sigma)?;
            (w, b)
        }
    };
    let y = tape.matmul(x, w)?;
    let y = tape.add_row(y, b)?;
    let kl_w = tape.kl_gaussian(weight_mu, weight_sigma, prior_sigma)?;
    let kl_b = tape.kl_gaussian(bias_mu, bias_sigma, prior_sigma)?;
    let kl = tape.add(kl_w, kl_b)?;
    Ok((y, kl))
}

/// Soft coarsening of every graph in the batch onto `K` supernodes.
pub struct Coarsened {
    /// `S_gᵀ·h_g` stacked over graphs, `(G·K)×d`.
    pub features: Var,
    /// `S_gᵀ·A_g·S_g` per graph, each `K×K`.
    pub adjacency: Vec<Var>,
    /// Row-stochastic assignment `S_g` per graph, each `n_g×K`.
    pub assignments: Vec<Var>,
    /// Dense adjacency `A_g` per graph (constants).
    pub dense: Vec<Var>,
}

/// DiffPool coarsening with `S_g = softmax_rows(h_g·W + b)` from `diffpool.assign`.
pub fn diffpool_coarsen(
    sess: &mut Session,
    h: Var,
    batch: &GraphBatch,
) -> Result<Coarsened, ModelError> {
    let logits = sess.linear(h, "diffpool.assign")?;
    let assign_all = sess.tape.softmax_rows(logits)?;
    let mut features = Vec::with_capacity(batch.num_graphs);
    let mut adjacency = Vec::with_capacity(batch.num_graphs);
    let mut assignments = Vec::with_capacity(batch.num_graphs);
    let mut dense = Vec::with_capacity(batch.num_graphs);
    for g in 0..batch.num_graphs {
        let nodes: Vec<usize> = batch.graph_nodes(g).collect();
        let n = nodes.len();
        let s = sess.tape.embedding_lookup(assign_all, &nodes)?;
        let hg = sess.tape.embedding_lookup(h, &nodes)?;
        let st = sess.tape.transpose(s)?;
        features.push(sess.tape.matmul(st, hg)?);
        let a = sess
            .tape
            .constant(Tensor::new(vec![n, n], batch.dense_adjacency(g))?);
        let as_ = sess.tape.matmul(a, s)?;
        adjacency.push(sess.tape.matmul(st, as_)?);
        assignments.push(s);
        dense.push(a);
    }
    let features = sess.tape.concat_rows(&features)?;
    Ok(Coarsened {
        features,
        adjacency,
        assignments,
        dense,
    })
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Mode, Tape, Var};

use super::layers::{bayes_linear, diffpool_coarsen, trunk, Session};
use super::{GraphBatch, ModelConfig, ModelError, ModelParams, Variant};

/// Graph-level outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    /// Clamped predictions, one per graph.
    pub predictions: Var,
    /// Summed KL divergence of the Bayesian readout.
    pub kl: Option<Var>,
    /// DiffPool link-prediction plus entropy regularizer, when enabled.
    pub aux_loss: Option<Var>,
}

fn expect_variant(config: &ModelConfig, expected: Variant) -> Result<(), ModelError> {
    if config.variant != expected {
        return Err(ModelError::VariantMismatch {
            expected,
            found: config.variant,
        });
    }
    Ok(())
}

/// `[G×1]` readout values to clamped `[G]` predictions.
fn finish(sess: &mut Session, config: &ModelConfig, y: Var) -> Result<Var, ModelError> {
    let g = sess.tape.value(y)?.len();
    let y = sess.tape.reshape(y, &[g])?;
    Ok(sess.tape.clamp(y, config.clamp_lo, config.clamp_hi)?)
}

pub fn forward_gin_virtual(
    sess: &mut Session,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<Var, ModelError> {
    expect_variant(config, Variant::GinVirtual)?;
    let h = trunk(sess, config, batch)?;
    let pooled = sess.tape.segment_sum(h, &batch.graph_ids, batch.num_graphs)?;
    let y = sess.linear(pooled, "readout")?;
    finish(sess, config, y)
}

/// Returns `(predictions, kl)`.
pub fn forward_gin_virtual_bnn(
    sess: &mut Session,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<(Var, Var), ModelError> {
    expect_variant(config, Variant::GinVirtualBnn)?;
    let h = trunk(sess, config, batch)?;
    let mut x = sess.tape.segment_sum(h, &batch.graph_ids, batch.num_graphs)?;
    let layers = config.bnn.hidden.len() + 1;
    let mut kl_total: Option<Var> = None;
    for i in 0..layers {
        let prefix = format!("bayes.{i}");
        let wm = sess.param(&format!("{prefix}.weight_mu"))?;
        let wr = sess.param(&format!("{prefix}.weight_rho"))?;
        let bm = sess.param(&format!("{prefix}.bias_mu"))?;
        let br = sess.param(&format!("{prefix}.bias_rho"))?;
        let (y, kl) = bayes_linear(
            sess.tape,
            x,
            wm,
            wr,
            bm,
            br,
            config.bnn.prior_sigma,
            sess.mode,
            &mut *sess.rng,
        )?;
        kl_total = Some(match kl_total {
            Some(total) => sess.tape.add(total, kl)?,
            None => kl,
        });
        x = if i + 1 < layers { sess.tape.relu(y)? } else { y };
    }
    let predictions = finish(sess, config, x)?;
    Ok((predictions, kl_total.expect("at least one Bayesian layer")))
}

/// Returns predictions and, if enabled, the DiffPool auxiliary loss.
pub fn forward_gin_virtual_diffpool(
    sess: &mut Session,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<(Var, Option<Var>), ModelError> {
    expect_variant(config, Variant::GinVirtualDiffpool)?;
    let k = config.diffpool.num_supernodes;
    let h = trunk(sess, config, batch)?;
    let coarse = diffpool_coarsen(sess, h, batch)?;

    // dense GIN step on each coarsened graph: (1 + ε)·h_c + a_c·h_c
    let mut neighbour_sums = Vec::with_capacity(batch.num_graphs);
    for (g, &a_c) in coarse.adjacency.iter().enumerate() {
        let rows: Vec<usize> = (g * k..(g + 1) * k).collect();
        let h_c = sess.tape.embedding_lookup(coarse.features, &rows)?;
        neighbour_sums.push(sess.tape.matmul(a_c, h_c)?);
    }
    let neighbour_sum = sess.tape.concat_rows(&neighbour_sums)?;
    let eps = sess.param("diffpool.eps")?;
    let scaled = sess.tape.scale(coarse.features, eps)?;
    let pre = sess.tape.add(coarse.features, scaled)?;
    let pre = sess.tape.add(pre, neighbour_sum)?;
    let z = sess.linear(pre, "diffpool.mlp.lin1")?;
    let z = sess.tape.relu(z)?;
    let z = sess.linear(z, "diffpool.mlp.lin2")?;

    let supernode_graph: Vec<usize> = (0..batch.num_graphs * k).map(|i| i / k).collect();
    let coarse_embed = sess.tape.segment_sum(z, &supernode_graph, batch.num_graphs)?;
    let node_embed = sess.tape.segment_sum(h, &batch.graph_ids, batch.num_graphs)?;
    let joint = sess.tape.concat_cols(node_embed, coarse_embed)?;
    let y = sess.linear(joint, "readout")?;
    let predictions = finish(sess, config, y)?;

    let aux = if config.diffpool.aux_loss {
        Some(diffpool_aux_loss(sess, &coarse, batch.num_graphs)?)
    } else {
        None
    };
    Ok((predictions, aux))
}

/// Mean over graphs of `‖A − S·Sᵀ‖_F / n²` plus mean assignment entropy.
fn diffpool_aux_loss(
    sess: &mut Session,
    coarse: &super::Coarsened,
    num_graphs: usize,
) -> Result<Var, ModelError> {
    let tape = &mut *sess.tape;
    let mut total: Option<Var> = None;
    for (&s, &a) in coarse.assignments.iter().zip(&coarse.dense) {
        let n = tape.value(s)?.dims2().expect("matrix").0 as f64;
        let st = tape.transpose(s)?;
        let sst = tape.matmul(s, st)?;
        let diff = tape.sub(a, sst)?;
        let sq = tape.mul(diff, diff)?;
        let sq = tape.sum(sq)?;
        let link = tape.sqrt(sq)?;
        let link = tape.scale_const(link, 1.0 / (n * n))?;

        let log_s = tape.add_const(s, 1e-15)?;
        let log_s = tape.log(log_s)?;
        let plogp = tape.mul(s, log_s)?;
        let plogp = tape.sum(plogp)?;
        let entropy = tape.scale_const(plogp, -1.0 / n)?;

        let term = tape.add(link, entropy)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let total = total.ok_or(ModelError::EmptyBatch)?;
    Ok(tape.scale_const(total, 1.0 / num_graphs as f64)?)
}

/// Dispatches on `config.variant`.
pub fn forward(
    sess: &mut Session,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<ModelOutput, ModelError> {
    match config.variant {
        Variant::GinVirtual => Ok(ModelOutput {
            predictions: forward_gin_virtual(sess, config, batch)?,
            kl: None,
            aux_loss: None,
        }),
        Variant::GinVirtualBnn => {
            let (predictions, kl) = forward_gin_virtual_bnn(sess, config, batch)?;
            Ok(ModelOutput {
                predictions,
                kl: Some(kl),
                aux_loss: None,
            })
        }
        Variant::GinVirtualDiffpool => {
            let (predictions, aux_loss) = forward_gin_virtual_diffpool(sess, config, batch)?;
            Ok(ModelOutput {
                predictions,
                kl: None,
                aux_loss,
            })
        }
    }
}

/// Eval-mode predictions for one batch.
pub fn predict_batch(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    // eval mode never samples; the generator only satisfies the signature
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sess = Session::new(&mut tape, params, Mode::Eval, &mut rng);
    let out = forward(&mut sess, config, batch)?;
    Ok(tape.value(out.predictions)?.data().to_vec())
}

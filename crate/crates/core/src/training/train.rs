use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{build_batch, forward, predict_batch, ModelConfig, ModelError, ModelParams, Session};
use crate::numerics::{AdamConfig, AdamState, Mode, Tape, Tensor};

use super::{write_atomic, Checkpoint, CheckpointMetadata, Dataset, SplitSpec, TrainingError};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            lr_decay: 0.25,
            lr_decay_every: 30,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |msg: &str| Err(TrainingError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        // lr = 0 is allowed as a frozen-parameter diagnostic
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail("lr must be a non-negative number");
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return fail("lr_decay must be positive and lr_decay_every at least 1");
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Learning rate for zero-based `epoch`: `lr · decay^⌊epoch / every⌋`.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay.powi((epoch / config.lr_decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub train_loss: f64,
    pub valid_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn predict_params(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<f64>, TrainingError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        for &i in chunk {
            if i >= dataset.len() {
                return Err(TrainingError::IndexOutOfRange {
                    index: i,
                    len: dataset.len(),
                });
            }
        }
        let batch = build_batch(chunk.iter().map(|&i| &dataset.molecules[i]))?;
        out.extend(predict_batch(params, config, &batch)?);
    }
    Ok(out)
}

fn mae(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Eval-mode, clamped predictions in index order.
pub fn predict(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<f64>, TrainingError> {
    predict_params(&checkpoint.params, &checkpoint.config, dataset, indices)
}

pub fn evaluate_mae(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<f64, TrainingError> {
    if indices.is_empty() {
        return Err(ModelError::EmptyBatch.into());
    }
    let targets = dataset.targets_at(indices)?;
    Ok(mae(&predict(checkpoint, dataset, indices)?, &targets))
}

/// Trains one weak learner; all randomness derives from `config.seed`.
///
/// The objective is the L1 loss, plus `kl_weight · KL / num_batches` for the
/// Bayesian variant and the auxiliary term for DiffPool when enabled. A final
/// training batch with fewer than two molecules is dropped.
pub fn train(
    dataset: &Dataset,
    split: &SplitSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainingError> {
    config.validate()?;
    split.validate(dataset.len())?;
    dataset.targets_at(&split.train)?;
    let valid_targets = dataset.targets_at(&split.valid)?;

    let bs = config.batch_size;
    let n = split.train.len();
    let num_batches = n / bs + usize::from(n % bs >= 2);
    if num_batches == 0 {
        return Err(TrainingError::InvalidConfig(
            "the training split needs at least 2 molecules".to_string(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&config.model, &mut rng)?;
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        params.tensors.values(),
    );
    let kl_scale = config.model.bnn.kl_weight / num_batches as f64;

    let mut order = split.train.clone();
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        adam.config.lr = learning_rate(config, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for b in 0..num_batches {
            let idx = &order[b * bs..((b + 1) * bs).min(n)];
            let batch = build_batch(idx.iter().map(|&i| &dataset.molecules[i]))?;
            let targets = Tensor::vector(idx.iter().map(|&i| dataset.targets[i].unwrap_or(0.0)).collect());

            tape.reset();
            let mut sess = Session::new(&mut tape, &params, Mode::Train, &mut rng);
            let out = forward(&mut sess, &config.model, &batch)?;
            let mut loss = sess.tape.l1_loss(out.predictions, &targets)?;
            if let Some(kl) = out.kl {
                let kl = sess.tape.scale_const(kl, kl_scale)?;
                loss = sess.tape.add(loss, kl)?;
            }
            if let Some(aux) = out.aux_loss {
                loss = sess.tape.add(loss, aux)?;
            }
            let vars = sess.param_vars().clone();
            let updates = sess.take_stat_updates();

            let loss_value = tape.value(loss)?.data()[0];
            if !loss_value.is_finite() {
                return Err(TrainingError::Diverged { epoch: epoch + 1 });
            }
            loss_sum += loss_value;
            let grads = tape.backward(loss)?;
            let grad_list: Vec<Tensor> = names
                .iter()
                .map(|name| match vars.get(name).and_then(|&v| grads.get(v)) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(params.tensors[name].shape()),
                })
                .collect();
            let grad_refs: Vec<&Tensor> = grad_list.iter().collect();
            let mut param_refs: Vec<&mut Tensor> = params.tensors.values_mut().collect();
            adam.step(&mut param_refs, &grad_refs)?;
            for (prefix, state) in updates {
                params.set_batch_norm_state(&prefix, state);
            }
        }

        let valid_mae = if split.valid.is_empty() {
            None
        } else {
            let pred = predict_params(&params, &config.model, dataset, &split.valid)?;
            Some(mae(&pred, &valid_targets))
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / num_batches as f64,
            valid_mae,
        });
    }

    let valid_mae = history.last().and_then(|r| r.valid_mae);
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.model.clone(),
            params,
            metadata: CheckpointMetadata {
                seed: config.seed,
                epochs: config.epochs,
                valid_mae,
            },
        },
        history,
    })
}

/// Atomically writes `epoch,train_loss,valid_mae` rows (blank MAE without validation).
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), TrainingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "valid_mae"])?;
    for r in history {
        let mae = r.valid_mae.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), mae])?;
    }
    let bytes = w.into_inner().map_err(|e| TrainingError::IoError(e.to_string()))?;
    write_atomic(path, &bytes)
}

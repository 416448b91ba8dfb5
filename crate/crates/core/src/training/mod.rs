//! Datasets, splits, the mini-batch training loop and portable checkpoints.

mod checkpoint;
mod dataset;
mod split;
mod synth;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMetadata, FORMAT_VERSION};
pub use dataset::{load_dataset, load_dataset_lenient, Dataset};
pub use split::{load_split, make_split, save_split, SplitSpec};
pub use synth::{synthetic_corpus, synthetic_target, write_corpus};
pub use train::{
    evaluate_mae, learning_rate, predict, train, write_history, EpochRecord, TrainConfig,
    TrainOutcome,
};

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::chem::ChemError;
use crate::models::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("bad header: expected columns `smiles,homolumogap`, found `{0}`")]
    BadHeader(String),
    #[error("row {row}: {source}")]
    ParseError { row: usize, source: ChemError },
    #[error("row {row}: invalid gap value `{value}`")]
    BadTarget { row: usize, value: String },
    #[error("split fractions {0:?} must be non-negative, sum to 1, and n must be at least 3")]
    BadFractions([f64; 3]),
    #[error("index {index} is outside a dataset of {len} molecules")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("index {0} appears in more than one split")]
    OverlappingSplits(usize),
    #[error("molecule {0} has no target")]
    MissingTargets(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("tensor `{0}` is missing or malformed")]
    CorruptTensor(String),
    #[error("i/o error: {0}")]
    IoError(String),
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<NumericsError> for TrainingError {
    fn from(e: NumericsError) -> Self {
        TrainingError::Model(e.into())
    }
}

impl From<io::Error> for TrainingError {
    fn from(e: io::Error) -> Self {
        TrainingError::IoError(e.to_string())
    }
}

impl From<csv::Error> for TrainingError {
    fn from(e: csv::Error) -> Self {
        TrainingError::IoError(e.to_string())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TrainingError> {
    Ok(crate::fsutil::write_atomic(path, bytes)?)
}

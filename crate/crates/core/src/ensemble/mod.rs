//! Combining weak-learner predictions and relating their spread to error.

mod io;
mod stats;

pub use io::{
    read_ensemble, read_prediction_matrix, read_predictions, summary_line, write_ensemble,
    write_predictions, write_report, EnsembleFile,
};
pub use stats::{
    ensemble_all, ensemble_mae_bound_check, ensemble_mean, error_vs_uncertainty, pearson,
    report_from_summary, uncertainty_std, Bin, MaeBound, UncertaintyReport, DEFAULT_BINS,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("prediction matrix has no learners or no molecules")]
    EmptyMatrix,
    #[error("learner {learner} has {len} predictions, expected {expected}")]
    RaggedRows { learner: usize, len: usize, expected: usize },
    #[error("learner {learner} has a non-finite prediction for column {column}")]
    NonFinite { learner: usize, column: usize },
    #[error("molecule indices differ between prediction sets")]
    IndexMismatch,
    #[error("need at least 2 learners, got {0}")]
    TooFewLearners(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("molecule {0} has no target")]
    MissingTargets(usize),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for EnsembleError {
    fn from(e: std::io::Error) -> Self {
        EnsembleError::Io(e.to_string())
    }
}

impl From<csv::Error> for EnsembleError {
    fn from(e: csv::Error) -> Self {
        EnsembleError::Io(e.to_string())
    }
}

/// `L × N` predictions of `L` learners on the molecules `indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub learner_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub indices: Vec<usize>,
}

impl PredictionMatrix {
    pub fn new(
        learner_labels: Vec<String>,
        values: Vec<Vec<f64>>,
        indices: Vec<usize>,
    ) -> Result<Self, EnsembleError> {
        if values.is_empty() || indices.is_empty() {
            return Err(EnsembleError::EmptyMatrix);
        }
        if learner_labels.len() != values.len() {
            return Err(EnsembleError::LengthMismatch {
                left: learner_labels.len(),
                right: values.len(),
            });
        }
        for (learner, row) in values.iter().enumerate() {
            if row.len() != indices.len() {
                return Err(EnsembleError::RaggedRows {
                    learner,
                    len: row.len(),
                    expected: indices.len(),
                });
            }
            if let Some(column) = row.iter().position(|v| !v.is_finite()) {
                return Err(EnsembleError::NonFinite { learner, column });
            }
        }
        Ok(Self {
            learner_labels,
            values,
            indices,
        })
    }

    /// Labels `learner0`, `learner1`, ... and indices `0..N`.
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self, EnsembleError> {
        let n = values.first().map_or(0, Vec::len);
        let labels = (0..values.len()).map(|l| format!("learner{l}")).collect();
        Self::new(labels, values, (0..n).collect())
    }

    pub fn num_learners(&self) -> usize {
        self.values.len()
    }

    pub fn num_molecules(&self) -> usize {
        self.indices.len()
    }

    pub(crate) fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |row| row[j])
    }
}

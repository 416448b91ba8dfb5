//! Dense tensors, a reverse-mode tape, losses and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{
    BatchNormState, Gradients, Mode, Tape, Var, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("invalid clamp bounds [{lo}, {hi}]")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("standard deviations must be positive")]
    NonPositiveSigma,
    #[error("backward needs a one-element loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable belongs to a reset or foreign tape")]
    DeadTape,
    #[error("batch norm needs at least {required} rows, got {rows}")]
    BatchTooSmall { rows: usize, required: usize },
}

use thiserror::Error;

use crate::grid::VolumeGrid;

#[derive(Debug, Error)]
pub enum QsmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: VolumeGrid, right: VolumeGrid },

    #[error("expected {expected} samples for grid, got {actual}")]
    SampleCount { expected: usize, actual: usize },

    #[error("non-finite sample at linear index {0}")]
    NonFinite(usize),

    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("mask is not binary (value {value} at linear index {index})")]
    NonBinaryMask { index: usize, value: f64 },

    #[error("orientation is not unit norm (|b| = {0})")]
    NonUnitOrientation(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("magnitude is negative at linear index {0}")]
    NegativeMagnitude(usize),

    #[error("reference has zero norm inside the mask")]
    ZeroNormReference,

    #[error("mask does not contain a voxel with a full {window}^3 window")]
    MaskTooSmall { window: usize },

    #[error("solver diverged: cost is non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
}

pub type Result<T> = std::result::Result<T, QsmError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> QsmError {
    QsmError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

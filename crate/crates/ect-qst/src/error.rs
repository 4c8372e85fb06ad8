use thiserror::Error;

/// Errors reported by the tomography pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qudit dimension d = {0}, need d >= 2")]
    InvalidDimension(usize),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("empty measurement: total shot count is zero")]
    EmptyMeasurement,

    #[error("sparsity measure undefined for an all-zero vector")]
    UndefinedSparsity,

    #[error("threshold calibration failed: {0}")]
    Calibration(String),

    #[error("size guard exceeded: {what} requires {requested}, limit is {limit}")]
    SizeGuard {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("state is not normalized: |amplitudes|^2 sums to {0}")]
    NotNormalized(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("likelihood problem contains no measurement records")]
    EmptyProblem,
}

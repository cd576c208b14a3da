//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by kernel computation, resampling, selection, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data: non-finite entries, labels outside {-1, +1},
    /// shape mismatches, or unparseable file content.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A centered kernel carries no signal, so alignment is undefined.
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    /// The data admits no usable bandwidth or distance structure.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Labels are effectively single-class where both classes are required.
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    /// Bootstrap coverage is too thin to support the requested decision.
    #[error("insufficient sampling: {0}")]
    InsufficientSampling(String),

    /// A numeric routine failed or exceeded its residual tolerance.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

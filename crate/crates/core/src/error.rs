use thiserror::Error;

/// Errors raised by the functional regression toolbox.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("insufficient data: need at least {needed}, got {got} ({context})")]
    InsufficientData {
        needed: usize,
        got: usize,
        context: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("ill-conditioned design (condition number {condition:.3e} exceeds {limit:.1e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("covariance matrix is not positive semidefinite (factorization failed with jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("index {index} out of range (valid: 0..{len})")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, FdaError>;

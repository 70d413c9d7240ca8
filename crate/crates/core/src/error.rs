use thiserror::Error;

/// Errors raised by the solvers, estimators and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stability bound violated: {0}")]
    Stability(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("under-resolved: {0}")]
    Resolution(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

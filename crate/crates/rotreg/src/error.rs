//! Crate-wide error type.

use thiserror::Error;

/// Error variants shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// An operation needs more samples than were provided.
    #[error("instance too small: {context} needs at least {min} samples, got {got}")]
    InstanceTooSmall {
        context: &'static str,
        min: usize,
        got: usize,
    },

    /// A public operation produced NaN or infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// An iterative solver broke down (overflow/NaN in its updates).
    #[error("numerical failure in {what} at iteration {iteration}")]
    NumericalFailure { what: &'static str, iteration: usize },

    /// Input is degenerate for the requested statistic (constant vector,
    /// zero covariance, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid experiment configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// A file could not be parsed; carries the offending line number.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A probability parameter fell outside `[0, 1]` (or was NaN).
    #[error("probability parameter must lie in [0, 1], got {0}")]
    InvalidProbability(f64),

    /// A quantile level fell outside the open interval `(0, 1)`.
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantileLevel(f64),

    /// A configuration or argument value violated its contract.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation was applied to an object in a state that forbids it
    /// (for example, updating a stopped p-value process).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Input data violated a shape or content requirement.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

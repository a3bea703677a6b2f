//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction or field construction with unusable dimensions.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A parameter outside its documented domain (alpha <= 0, bad order, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Malformed field file: wrong magic, truncated payload, bad dimensions.
    #[error("field format error: {0}")]
    Format(String),

    /// Experiment configuration rejected during validation.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

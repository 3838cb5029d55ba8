//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or sweep parameter failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An analytic-model input is outside the domain of the formulas.
    #[error("out of domain: {0}")]
    Domain(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Training(String),

    /// A model file does not match the architecture it claims to hold.
    #[error("model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

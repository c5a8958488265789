use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, hyperparameters or data preconditions.
    #[error("configuration error: {0}")]
    Config(String),

    /// A forward or backward pass produced NaN or infinity.
    #[error("non-finite value in {layer}: {detail}")]
    Numeric { layer: String, detail: String },

    /// Caller broke an API contract (e.g. backward on an eval-mode cache).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

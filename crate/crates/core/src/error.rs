//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, evaluation, and solver entry points.
///
/// Every variant carries enough context to report the offending value;
/// numerical failures inside solver loops additionally carry the iteration
/// at which the iterate became unusable.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid divergence parameter: {0}")]
    InvalidDivergence(String),

    #[error("value outside the function's domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("oracle failed to certify a solution: {0}")]
    Oracle(String),

    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn oracle(msg: impl Into<String>) -> Self {
        Error::Oracle(msg.into())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

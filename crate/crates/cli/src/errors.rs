//! Command-level errors and their process exit codes.

use thiserror::Error;

/// Exit codes: 0 success, 2 configuration or I/O error, 3 numerical
/// failure, 4 audit violation.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] dro_core::Error),

    #[error("audit violation: {0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                dro_core::Error::InvalidDivergence(_)
                | dro_core::Error::Config(_)
                | dro_core::Error::Data(_) => 2,
                dro_core::Error::Domain(_)
                | dro_core::Error::Oracle(_)
                | dro_core::Error::NonFinite { .. } => 3,
            },
            CliError::Violation(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

use std::path::PathBuf;

use deqfuse_core::DeqError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] DeqError),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 validation, 2 numeric failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                DeqError::Shape { .. } | DeqError::Config(_) | DeqError::Domain(_) | DeqError::State(_) => {
                    EXIT_VALIDATION
                }
                DeqError::Numeric(_) | DeqError::Divergence { .. } | DeqError::TrainingAborted { .. } => EXIT_NUMERIC,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

use std::path::Path;

use thiserror::Error;

/// Failure of a subcommand; each variant maps to one exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Violation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Validation(_) => 2,
            CliError::Violation(_) => 3,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Prefixes a validation error with the file it came from.
    pub fn invalid(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

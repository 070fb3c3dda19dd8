use std::path::PathBuf;

use dartclean_core::ErrorCategory;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: dartclean_core::Error,
    },

    #[error(transparent)]
    Core(#[from] dartclean_core::Error),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    /// Process exit code: 2 configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        let category = match self {
            CliError::Config(_) => return 2,
            CliError::Io { .. } => return 3,
            CliError::File { source, .. } => source.category(),
            CliError::Core(e) => e.category(),
        };
        match category {
            ErrorCategory::Config => 2,
            ErrorCategory::Data | ErrorCategory::Io => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}

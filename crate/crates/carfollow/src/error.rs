use std::path::PathBuf;

use carfollow_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Failures of the command line layer, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, configuration or input data. Exit code 2.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {message}")]
    Parse { path: PathBuf, row: u64, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    /// A bug or an unexpected runtime failure. Exit code 1.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Core(CoreError::Degenerate { .. } | CoreError::ZeroWeights) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }
}

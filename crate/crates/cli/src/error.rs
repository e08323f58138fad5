use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<kernlab::Error> for CliError {
    fn from(e: kernlab::Error) -> Self {
        match e {
            kernlab::Error::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            kernlab::Error::Unknown { .. } => CliError::Usage(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

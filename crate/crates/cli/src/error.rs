use std::path::PathBuf;

use thiserror::Error;

/// Failures mapped onto process exit codes: usage errors exit 1, data errors 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: no such file or directory", .0.display())]
    Missing(PathBuf),

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Data(#[from] histoner_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

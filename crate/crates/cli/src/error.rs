use std::path::PathBuf;

use qsm_core::QsmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {source}")]
    MissingInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid config {path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Qsm(#[from] QsmError),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for usage, config and input problems; 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Qsm(QsmError::Diverged { .. }) | CliError::Output { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

use std::path::{Path, PathBuf};

use reentry_core::error::{ModelError, PrepaceError};

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("prepacing failed: {0}")]
    Prepace(#[from] PrepaceError),
    #[error("forward model failed: {0}")]
    Model(#[from] ModelError),
    #[error("the starting point has log posterior {0}")]
    InfeasibleStart(f64),
}

impl InferError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Prepace(PrepaceError::NoSpiral { .. }) => 2,
            _ => 1,
        }
    }
}

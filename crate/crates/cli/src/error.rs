use std::path::{Path, PathBuf};

use afm_core::AfmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] AfmError),
}

impl CliError {
    pub fn data(path: &Path, message: impl Into<String>) -> Self {
        Self::Data {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for usage or configuration problems, 2 for bad input data, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Io { .. } | Self::Data { .. } => 2,
            Self::Model(e) => match e {
                AfmError::InvalidConfig(_)
                | AfmError::InvalidDimension(_)
                | AfmError::InvalidRank { .. }
                | AfmError::Nonstationary(_) => 1,
                AfmError::Singular | AfmError::Divergence { .. } | AfmError::Transform(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

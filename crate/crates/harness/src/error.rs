use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] phasefeed_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A reproduction preset finished but missed its target.
    #[error("preset {0} outside tolerance")]
    Tolerance(String),
}

impl HarnessError {
    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Validation(_) | Self::Core(_) => 2,
            Self::Tolerance(_) => 3,
            Self::Io { .. } | Self::Format { .. } => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl std::fmt::Display) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation(msg.into())
}

use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("training diverged: non-finite values in {0}")]
    TrainingDivergence(String),

    #[error("sampling diverged at step t={step}")]
    SamplingDivergence { step: usize },

    #[error("format: {message} (byte offset {offset})")]
    Format { offset: u64, message: String },

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for CLI exit codes and the `error:<category>:` prefix.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::Usage(_) => ErrorCategory::Config,
            Error::TrainingDivergence(_) | Error::SamplingDivergence { .. } | Error::Io { .. } => {
                ErrorCategory::Runtime
            }
            Error::Format { .. } | Error::Integrity(_) => ErrorCategory::Integrity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Runtime,
    Integrity,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 1,
            ErrorCategory::Runtime => 2,
            ErrorCategory::Integrity => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Runtime => "runtime",
            ErrorCategory::Integrity => "integrity",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

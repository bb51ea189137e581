use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("non-finite gradient in parameter `{name}` ({count} non-finite entries)")]
    NonFiniteGradient { name: String, count: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Json(_) | Error::Dataset { .. } => 2,
            Error::Integrity(_) => 3,
            Error::Invariant(_) | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => 4,
            _ => 1,
        }
    }
}

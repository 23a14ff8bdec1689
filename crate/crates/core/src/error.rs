use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// A file did not match its declared layout.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A required component (extractor, model) is not available.
    #[error("dependency unavailable: {0}")]
    DependencyUnavailable(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for command-line front ends.
    ///
    /// 2 invalid input, 3 missing dependency, 4 format error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::NotFound(_) | Error::Training(_) | Error::Io { .. } => 2,
            Error::DependencyUnavailable(_) => 3,
            Error::Format { .. } => 4,
        }
    }
}

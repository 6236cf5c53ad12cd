use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EstError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("deserialization error: {0}")]
    Deserialize(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl EstError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        EstError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure at runtime.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            EstError::Config(_)
                | EstError::Parse { .. }
                | EstError::Validation(_)
                | EstError::Split(_)
                | EstError::Generation(_)
                | EstError::Io { .. }
        )
    }
}

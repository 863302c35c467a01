use std::path::PathBuf;

use crate::model::TraceEntry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined invariance score: both activations are zero")]
    UndefinedScore,

    #[error("fit failed after {} iterations: {message}", trace.len())]
    FitFailure { message: String, trace: Vec<TraceEntry> },

    #[error("{path}:{line}: parse error: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{path}:{line}: validation error: {message}")]
    Validation { path: String, line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

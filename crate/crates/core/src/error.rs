use std::path::PathBuf;

use crate::agent::chat::ChatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: item id {item} out of range for catalog of {item_count} items")]
    ItemOutOfRange {
        line: usize,
        item: u64,
        item_count: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("chat backend: {0}")]
    Backend(#[from] ChatError),

    #[error("malformed record: {0}")]
    Format(String),

    /// Some generated users could not be completed; finished users were
    /// kept for a resumed run.
    #[error("{failed} generated users failed; rerun to resume")]
    Incomplete { failed: usize },
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

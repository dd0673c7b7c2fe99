use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid UTF-8 in document {doc_id} at byte {byte_offset}")]
    Encoding { doc_id: String, byte_offset: usize },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),

    #[error("{path}:{line}: duplicate pair ({key:?}, {target:?})")]
    DuplicatePair {
        path: PathBuf,
        line: usize,
        key: String,
        target: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid template {id:?}: {reason}")]
    InvalidTemplate { id: String, reason: String },

    #[error("index file: {0}")]
    IndexFormat(String),

    #[error("request failed: {0}")]
    Transport(String),

    #[error("endpoint error (status {status}): {body}")]
    Endpoint { status: u16, body: String },

    #[error("inputs are not keyed by the same pairs; missing: {}", .0.join(", "))]
    KeyMismatch(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport failures and server-side (5xx, 429) responses are worth retrying.
    pub fn is_retriable(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Endpoint { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate note id '{0}'")]
    DuplicateId(String),

    #[error("note id must be non-empty")]
    EmptyId,

    #[error("unknown label '{value}' for task {task}")]
    UnknownLabel { task: TaskId, value: String },

    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("note '{0}' has no gold labels")]
    MissingLabels(String),

    #[error("instance for note '{0}' has no gold label")]
    MissingGold(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("task {0} has no training data")]
    EmptyTask(TaskId),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("remote service: {0}")]
    Remote(String),

    #[error("I/O error on {path}: {source}")]
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

    /// True for failures of the environment (filesystem, network, remote
    /// services) rather than of the caller's inputs.
    pub fn is_environmental(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Remote(_) | Error::Provider(_)
        )
    }
}

use crate::eval::Task;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("{kind} id {id} out of range (table size {len})")]
    InvalidId {
        kind: &'static str,
        id: usize,
        len: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("method {method} cannot perform task {task}")]
    Capability { method: String, task: Task },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

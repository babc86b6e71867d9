use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge #{index} ({user}, {item}) is out of range for {num_users} users x {num_items} items")]
    EdgeOutOfRange {
        index: usize,
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },

    #[error("isolated nodes after construction: users {users:?}, items {items:?}")]
    IsolatedNodes { users: Vec<usize>, items: Vec<usize> },

    #[error("{side} index {index} out of range (size {len})")]
    NodeOutOfRange {
        side: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("user {0} interacted with every item; no negative can be sampled")]
    NoNegative(usize),

    #[error("non-finite loss at step {step}; offending embedding rows {rows:?}")]
    NonFinite { step: usize, rows: Vec<usize> },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no interactions found")]
    EmptyInput(PathBuf),

    #[error("every interaction was removed by the minimum-degree filter (threshold {0})")]
    FilteredEmpty(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

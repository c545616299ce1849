use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the stability toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown item index {0}")]
    UnknownItem(u32),
    #[error("unknown item id `{0}`")]
    UnknownItemName(String),
    #[error("unknown user id `{0}`")]
    UnknownUserName(String),
    #[error("unknown interaction uid {0}")]
    UnknownUid(u64),
    #[error("score vector contains NaN at index {0}")]
    NanScore(usize),
    #[error("rank lists are not permutations of the same catalog")]
    CatalogMismatch,
    #[error("instance key sets differ between rank-list maps")]
    KeyMismatch,
    #[error("pool holds {pool} interactions, {requested} requested")]
    PoolTooSmall { pool: usize, requested: usize },
    #[error("reference list holds {got} items, {need} required")]
    ShortReferences { got: usize, need: usize },
    #[error("no reference list for user {user} position {position}")]
    MissingReference { user: u32, position: u32 },
    #[error("{got} users available, at least {need} required")]
    TooFewUsers { got: usize, need: usize },
    #[error("at least two observations per sample are required")]
    TooFewObservations,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

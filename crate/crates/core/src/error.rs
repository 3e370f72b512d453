use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MdpdError>;

#[derive(Debug, Error)]
pub enum MdpdError {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("worker {worker} has no observed labels")]
    EmptyWorker { worker: usize },

    #[error("exact enumeration of {cells} cells exceeds the limit of {limit}")]
    TooLargeToEnumerate { cells: u128, limit: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown labels in {path}: {offenders:?}")]
    UnknownLabels { path: PathBuf, offenders: Vec<String> },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

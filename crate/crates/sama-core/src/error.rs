//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum SamaError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dataset line {line}: {msg}")]
    DatasetLine { line: usize, msg: String },

    #[error("bad checkpoint magic")]
    BadCheckpointMagic,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

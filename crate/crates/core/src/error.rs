use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown customer id {0}")]
    UnknownCustomer(usize),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("instance has {n} customers; the exact oracle handles at most {max}")]
    InstanceTooLarge { n: usize, max: usize },

    #[error("move is stale: enumerated on solution {expected:#018x}, applied to {found:#018x}")]
    StaleMove { expected: u64, found: u64 },

    #[error("unknown PSG node {0}")]
    UnknownNode(u64),

    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("tape already consumed by a previous backward pass; run the forward pass again")]
    TapeConsumed,

    #[error("loss must be a scalar, got {0} elements")]
    NonScalarLoss(usize),

    #[error("no parameter receives a gradient: the path is blocked at `{op}` (node {node})")]
    DetachedPath { op: &'static str, node: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
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
}

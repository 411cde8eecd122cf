use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("optimizer: parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("search space: {0}")]
    Space(String),

    #[error("operation {op} is not admissible in layer {layer}: {reason}")]
    Inadmissible {
        layer: usize,
        op: usize,
        reason: String,
    },

    #[error("unreachable target for `{objective}`: target {target} exceeds maximum {max}")]
    UnreachableTarget {
        objective: String,
        target: f64,
        max: f64,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("search state: {0}")]
    State(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

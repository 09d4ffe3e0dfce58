use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FlowError {
    /// A required input file is missing or structurally malformed.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("node id {id} out of range (graph has {num_nodes} nodes)")]
    Index { id: usize, num_nodes: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate walk: node {node} has no neighbors")]
    DegenerateWalk { node: usize },

    #[error("non-finite value{}: {message}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Numerics {
        epoch: Option<usize>,
        message: String,
    },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("no flow conserved at node {node}")]
    EmptyInfluence { node: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FlowError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FlowError::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        FlowError::Argument(msg.into())
    }
}

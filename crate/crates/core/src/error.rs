use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("node {node} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("self-loop on node {0}; self-loops enter only through normalization")]
    SelfLoop(usize),

    #[error("{count} duplicate edge(s), first ({u}, {v})")]
    DuplicateEdges { count: usize, u: usize, v: usize },

    #[error("node {0} has degree 0, D^-1/2 is undefined without the identity term")]
    IsolatedNode(usize),

    #[error("degree group {0} is empty")]
    EmptyGroup(usize),

    #[error("invalid degree grouping: {0}")]
    InvalidGrouping(String),

    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("labeled node set is empty")]
    EmptyLabelSet,

    #[error("evaluation node set is empty")]
    EmptyEvalSet,

    #[error("forward cache does not match the current parameters")]
    StaleCache,

    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    #[error("need at least 3 distinct deviation values for layer {layer}, found {found}")]
    InsufficientPoints { layer: usize, found: usize },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },

    #[error("index {index} out of range ({limit}) in {path}")]
    IndexOutOfRange { path: PathBuf, index: usize, limit: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

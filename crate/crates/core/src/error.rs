use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("coordinate {coord} has no inlier frames")]
    UnrecoverableChannel { coord: usize },
    #[error("node {node} has no admissible out-edges")]
    DeadEnd { node: usize },
    #[error("observation has zero probability under every state")]
    DegenerateEvidence,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{what} dimension mismatch: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action bin {0} out of range")]
    InvalidAction(usize),
    #[error("simulation produced a non-finite state")]
    NonFiniteState,
    #[error("object dropped during {0} consecutive warm-up attempts")]
    WarmupFailed(usize),
    #[error("non-finite {what} at {location}")]
    NonFinite { what: &'static str, location: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

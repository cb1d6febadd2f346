use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid demand profile: {0}")]
    Demand(String),

    #[error("phase index {index} out of range (table has {count} phases)")]
    PhaseOutOfRange { index: usize, count: usize },

    #[error("observation is missing lane {0}")]
    MissingLane(usize),

    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(f64),

    #[error("unknown value-loss mode `{0}` (expected `standard` or `literal`)")]
    UnknownValueLossMode(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("malformed decision log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },

    #[error("{0}")]
    Mismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

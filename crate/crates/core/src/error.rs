//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty test set for client {client}")]
    EmptyTestSet { client: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite loss at round {round}, client {client}")]
    NonFiniteLoss { round: usize, client: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {reason}")]
    IdxParse { path: PathBuf, reason: String },

    #[error("client {client} uploaded more than one record for the same key in one round")]
    DuplicateUpload { client: usize },

    #[error("missing upload from client {client} in a synchronous exchange round")]
    MissingUpload { client: usize },

    #[error(
        "exchange-round cost drifted: round {round} charged {actual} scalars, expected {expected}"
    )]
    CommCostDrift {
        round: usize,
        expected: u64,
        actual: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

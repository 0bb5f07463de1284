use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid degree {0}: a permutation needs at least one point")]
    InvalidDegree(usize),

    #[error("not a permutation of 1..={n}: {entries:?}")]
    NotAPermutation { n: usize, entries: Vec<usize> },

    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },

    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("token {token} out of range (limit {limit})")]
    TokenOutOfRange { token: usize, limit: usize },

    #[error("expected a word of {expected} tokens, got {actual}")]
    WordLength { expected: usize, actual: usize },

    #[error("permutation prefix of length {len} exceeds degree {n}")]
    PrefixTooLong { len: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("window plan is not admissible: {0}")]
    InadmissiblePlan(String),

    #[error("dataset {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {0:?}: every extent must be >= 1")]
    InvalidShape(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; reset before calling again")]
    BackwardTwice,
    #[error("backward called on a tensor that is not part of a recorded graph")]
    NotRecorded,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{op}: input {input:?} is smaller than kernel {kernel}")]
    InputTooSmall {
        op: &'static str,
        input: Vec<usize>,
        kernel: usize,
    },
    #[error("batchnorm in train mode needs at least 2 values per channel, got {0}")]
    BatchNormTooFewValues(usize),
    #[error("target row {row} is not a probability distribution (sum {sum})")]
    InvalidTarget { row: usize, sum: f32 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("{op}: value {value} out of range {range}")]
    OutOfRange {
        op: &'static str,
        value: f64,
        range: String,
    },
    #[error("invalid label {label} in record {record}")]
    InvalidLabel { label: u8, record: usize },
    #[error("truncated dataset file {path}: {len} bytes is not a multiple of {record}")]
    Truncated {
        path: PathBuf,
        len: usize,
        record: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset not found: {0}")]
    DatasetMissing(PathBuf),
    #[error("unknown visualization target {0:?}")]
    UnknownTarget(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor extents must all be >= 1, got {shape:?}")]
    Extents { shape: Vec<usize> },

    #[error("shape {shape:?} needs a buffer of its product, got {len} values")]
    BufferLength { shape: Vec<usize>, len: usize },

    #[error("{op}: expected a rank-{expected} tensor, got shape {got:?}")]
    Rank { op: &'static str, expected: usize, got: Vec<usize> },

    #[error("{op}: axis {axis} mismatch, expected {expected}, got {got}")]
    Axis { op: &'static str, axis: usize, expected: usize, got: usize },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: kernel {kernel} does not fit padded extent {padded} on axis {axis}")]
    KernelTooLarge { op: &'static str, axis: usize, kernel: usize, padded: usize },

    #[error("{op}: needs at least one input")]
    Empty { op: &'static str },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("operation `{op}` has no backward pass")]
    NoBackward { op: String },

    #[error("backward has already been run on this graph")]
    BackwardTwice,

    #[error("backward needs a single-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("class {0} has no images")]
    EmptyClass(String),

    #[error("cannot decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint tensor `{name}` does not match the model: {reason}")]
    CheckpointMismatch { name: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

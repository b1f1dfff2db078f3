//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{context}: tensor data length {len} does not match shape {shape:?}")]
    DataLength {
        context: &'static str,
        shape: Vec<usize>,
        len: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("loss does not depend on any gradient-tracked leaf")]
    NoGradGraph,

    #[error("probability vector invalid: {reason}")]
    InvalidProbability { reason: String },

    #[error("label index {index} out of range for {classes} classes")]
    InvalidLabel { index: usize, classes: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic { expected: u32, found: u32 },

    #[error("truncated IDX file: need {needed} bytes, have {available}")]
    IdxTruncated { needed: usize, available: usize },

    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("bad parameter file: {0}")]
    BadParamsFile(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: learning rate too high or probability clamp breached")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

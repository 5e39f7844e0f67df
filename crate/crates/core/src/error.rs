//! Error types shared across the codec.

use thiserror::Error;

/// Errors raised by tensor kernels.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: [usize; 4],
        right: [usize; 4],
    },
    #[error("{context}: {value} not divisible by {divisor}")]
    Divisibility {
        context: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: [usize; 4],
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Top-level error for codec, pipeline, training and I/O operations.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("entropy coder: truncated bitstream")]
    TruncatedStream,
    #[error("container format: {0}")]
    Format(String),
    #[error("weights: {0}")]
    Weights(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(String),
    #[error("decode worker failed: {0}")]
    Worker(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;
pub type TensorResult<T> = std::result::Result<T, TensorError>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by quantization, fitting, kernels, and the encoder.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input value {value} at index {index}")]
    NonFiniteInput { value: f64, index: usize },

    #[error("non-finite function value at x = {x}")]
    NonFiniteValue { x: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("unsupported bit width {0} (expected 8 or 32)")]
    InvalidBits(u8),

    #[error("invalid scale {0} (must be finite and > 0)")]
    InvalidScale(f64),

    #[error("invalid clipping range {0} (must be finite and > 0)")]
    InvalidAlpha(f64),

    #[error("degenerate polynomial: leading coefficient is zero")]
    DegeneratePolynomial,

    #[error("duplicate interpolation node x = {0}")]
    DuplicateNode(f64),

    #[error("exponential kernel requires non-positive input, got {0}")]
    PositiveExpInput(i64),

    #[error("integer square root requires non-negative input, got {0}")]
    NegativeSqrtInput(i64),

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("tensor role mismatch: {context} (expected {expected}-bit, got {actual}-bit)")]
    BitsMismatch {
        context: &'static str,
        expected: u8,
        actual: u8,
    },

    #[error("value {value} out of range for {bits}-bit payload")]
    ValueOutOfRange { value: i64, bits: u8 },

    #[error("unknown benchmark op {0:?}")]
    UnknownOp(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed weight file: {0}")]
    MalformedWeightFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

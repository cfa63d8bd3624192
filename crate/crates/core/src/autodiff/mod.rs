//! Dense float64 tensors with tape-based reverse-mode differentiation.

mod activation;
mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use activation::{
    prelu, sigmoid, ActivationKind, ELU_ALPHA, LRELU_SLOPE, NLRELU_BETA, PRELU_INIT_SLOPE, SELU_ALPHA,
    SELU_LAMBDA,
};
pub use gradcheck::{analytic_gradient, grad_check, max_relative_error, numeric_gradient};
pub use tape::{same_padding, softmax, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: extents must be non-empty and positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("window {window} exceeds sequence length {len}; pad the token sequence")]
    WindowExceedsSequence { window: usize, len: usize },
    #[error("keep rate {0} outside (0, 1]")]
    InvalidKeepRate(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable {0} is not on this tape")]
    UnknownVar(usize),
    #[error("unknown activation '{0}'")]
    UnknownActivation(String),
    #[error("function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

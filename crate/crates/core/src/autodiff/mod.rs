//! Dense tensors and a dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Values are recorded in
//! execution order; [`Tape::backward`] walks the record in exact reverse
//! and accumulates gradients into every trainable leaf. Broadcasting is
//! limited to a leading batch dimension: an operand whose shape equals the
//! other operand's shape without its first axis is repeated along that
//! axis. A scalar broadcasts against any shape.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("expected {expected} values, got {got}")]
    DataLength { expected: usize, got: usize },
    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor does not track gradients")]
    NoGradient,
}

/// Modified exponential linear unit: `1 + x` for positive inputs, `exp(x)` otherwise.
pub fn melu(x: f64) -> f64 {
    if x > 0.0 {
        1.0 + x
    } else {
        x.exp()
    }
}

pub fn melu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

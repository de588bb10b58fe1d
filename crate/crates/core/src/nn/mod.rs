//! Differentiable sequence layers and the labelled-model builder.
//!
//! The entropic layers replace the ratios of the EFB recursions with
//! positive-output feedforward kernels:
//!
//! * [`HnmcLayer`]: one kernel of `(y_{t+1}, one-hot(j))` standing in for
//!   `a_j(i) L_{y_{t+1}}(i) / pi(i)`;
//! * [`Hnmc2Layer`]: one kernel of `(y_{t+1}, one-hot(k, j))` standing in for
//!   `a2_{k,j}(i) L_{y_{t+1}}(i) / pi(i)`;
//! * [`HnmcCnLayer`]: a product of two kernels standing in for
//!   `I_{j,y_t}(i) L_{y_{t+1}}(i) / a_j(i)` and `J_{i,y_{t+1}}(j) / pi(j)`.
//!
//! Each renormalises its forward and backward tables at every step and
//! emits the per-position normalised product, a probability vector over its
//! hidden states. [`RnnLayer`] and [`BiRnnLayer`] are the recurrent baselines.

mod efb_layers;
pub mod embed;
mod gradcheck;
mod kernel;
mod model;
mod params;
mod rnn;

pub use efb_layers::{Hnmc2Layer, HnmcCnLayer, HnmcLayer};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use kernel::{AffineKernel, Kernel, LookupKernel, LookupFn};
pub use model::{build_model, ArchitectureSpec, Layer, LabeledModel, ModelKind};
pub use params::{Graph, ParamId, ParamStore};
pub use rnn::{BiRnnLayer, Dense, Merge, RnnLayer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{TensorError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite or non-positive value in layer output at position {position}")]
    NonFinite { position: usize },
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("lookup kernels need one-hot observations")]
    NotOneHot,
    #[error("empty input sequence")]
    EmptySequence,
    #[error("input width {got} does not match the expected {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("label {label} is outside the {n_labels} model labels")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("sequence has {inputs} positions but {labels} labels")]
    LengthMismatch { inputs: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Strictly positive last activation of an entropic kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Melu,
    Exp,
    Sigmoid,
}

impl Activation {
    pub(crate) fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Melu => g.tape.melu(x),
            Activation::Exp => g.tape.exp(x),
            Activation::Sigmoid => g.tape.sigmoid(x),
        }
    }
}

/// Rejects outputs that are non-finite, negative or sum to zero.
pub(crate) fn check_distribution(g: &Graph<'_>, v: Var, position: usize) -> Result<()> {
    let vals = g.tape.value(v);
    let ok = vals.iter().all(|x| x.is_finite() && *x >= 0.0) && vals.iter().sum::<f64>() > 0.0;
    if ok {
        Ok(())
    } else {
        Err(NnError::NonFinite { position })
    }
}

//! Exact posterior inference for discrete hidden Markov chains.
//!
//! Three laws are supported (see [`ChainKind`]): the classic HMM, the
//! order-2 HMM, and the HMM with complexified noise, where each observation
//! depends on the previous, current and next hidden state. For each one the
//! module provides the brute-force posterior over all hidden paths, the
//! entropic forward-backward recursions over `(pi, a, L)`-style parameters,
//! and the unnormalised recursions whose ratio to the entropic ones is the
//! product of observation marginals.

mod classic;
mod efb;
mod enumerate;
mod params;
mod sample;
mod unnormalized;

pub use classic::classic_fb;
pub use efb::{efb, efb2, efb2_tables, efb_cn, efb_cn_tables, efb_tables, Pass, Rescale};
pub use enumerate::{enumerate_observation_marginal, enumerate_posteriors, joint_probability, DEFAULT_ENUMERATION_CAP};
pub(crate) use params::dirichlet_row;
pub use params::{derive_entropic, stationary_distribution, CnLaw, EntropicHmmParams, GenerativeHmmParams};
pub use unnormalized::{unnormalized_recursions, UNNORMALIZED_CAP};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which joint law a set of generative parameters describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainKind {
    Hmm,
    Hmm2,
    HmmCn,
}

impl ChainKind {
    pub const ALL: [ChainKind; 3] = [ChainKind::Hmm, ChainKind::Hmm2, ChainKind::HmmCn];

    pub fn name(self) -> &'static str {
        match self {
            ChainKind::Hmm => "hmm",
            ChainKind::Hmm2 => "hmm2",
            ChainKind::HmmCn => "hmm-cn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("empty observation sequence")]
    EmptySequence,
    #[error("symbol {symbol} at position {position} is outside the alphabet of size {n_obs}")]
    SymbolOutOfRange {
        position: usize,
        symbol: usize,
        n_obs: usize,
    },
    #[error("sequence of length {len} is too short (need at least {min})")]
    SequenceTooShort { len: usize, min: usize },
    #[error("sequence length {len} exceeds the cap of {cap}")]
    CapExceeded { len: usize, cap: usize },
    #[error("observation sequence has zero probability (forward mass vanished at position {position})")]
    ZeroProbability { position: usize },
    #[error("degenerate table at position {position}: all entries are zero or non-finite")]
    Degenerate { position: usize },
    #[error("parameters lack the {0} table")]
    MissingTable(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("parameterisation error: {0}")]
    Parameterization(String),
    #[error("observation symbol {symbol} has zero marginal probability")]
    ZeroMarginal { symbol: usize },
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// `T x N` matrix of `p(x_t = i | y_{1:T})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix(Array2<f64>);

impl PosteriorMatrix {
    /// Normalises each row of `weights` to sum to one.
    pub fn from_weights(mut weights: Array2<f64>) -> Result<Self> {
        for (t, mut row) in weights.axis_iter_mut(Axis(0)).enumerate() {
            let s: f64 = row.sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(InferenceError::Degenerate { position: t });
            }
            row.mapv_inplace(|v| v / s);
        }
        Ok(PosteriorMatrix(weights))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn n_states(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.0[[t, i]]
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.0.row(t).to_vec()
    }

    pub fn max_abs_diff(&self, other: &PosteriorMatrix) -> f64 {
        assert_eq!(self.0.dim(), other.0.dim(), "posterior shapes differ");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Maximum posterior mode per position (first index wins ties).
    pub fn mpm(&self) -> Vec<usize> {
        self.0
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Forward/backward tables indexed `[t, i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTables {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

impl ChainTables {
    pub fn posterior(&self) -> Result<PosteriorMatrix> {
        PosteriorMatrix::from_weights(&self.alpha * &self.beta)
    }
}

/// Pairwise forward/backward tables indexed `[t, j, i]` over
/// `(x_{t-1} = j, x_t = i)`. Slice `t = 0` is unused and left at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTables {
    pub alpha: Array3<f64>,
    pub beta: Array3<f64>,
}

impl PairTables {
    pub fn posterior(&self) -> Result<PosteriorMatrix> {
        let (t_len, n, _) = self.alpha.dim();
        if t_len < 2 {
            return Err(InferenceError::SequenceTooShort { len: t_len, min: 2 });
        }
        let prod = &self.alpha * &self.beta;
        let mut w = Array2::zeros((t_len, n));
        // first position: marginalise the second index of the t = 2 table
        for i in 0..n {
            w[[0, i]] = (0..n).map(|j| prod[[1, i, j]]).sum();
        }
        for t in 1..t_len {
            for i in 0..n {
                w[[t, i]] = (0..n).map(|j| prod[[t, j, i]]).sum();
            }
        }
        PosteriorMatrix::from_weights(w)
    }
}

/// Either shape of recursion table.
#[derive(Debug, Clone, PartialEq)]
pub enum Tables {
    Chain(ChainTables),
    Pair(PairTables),
}

impl Tables {
    pub fn posterior(&self) -> Result<PosteriorMatrix> {
        match self {
            Tables::Chain(t) => t.posterior(),
            Tables::Pair(t) => t.posterior(),
        }
    }
}

pub(crate) fn check_obs(obs: &[usize], n_obs: usize) -> Result<()> {
    if obs.is_empty() {
        return Err(InferenceError::EmptySequence);
    }
    for (position, &symbol) in obs.iter().enumerate() {
        if symbol >= n_obs {
            return Err(InferenceError::SymbolOutOfRange {
                position,
                symbol,
                n_obs,
            });
        }
    }
    Ok(())
}

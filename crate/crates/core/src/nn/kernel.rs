use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use super::{Activation, Graph, NnError, ParamId, ParamStore, Result};
use crate::autodiff::Var;

/// Positive map from observation slots and a conditioning state to a row of
/// `n_out` values. Evaluated for every conditioning state at once, giving an
/// `n_cond x n_out` matrix whose row `j` is the kernel at `one-hot(j)`.
#[derive(Debug, Clone)]
pub enum Kernel {
    Affine(AffineKernel),
    Lookup(LookupKernel),
}

impl Kernel {
    pub fn n_cond(&self) -> usize {
        match self {
            Kernel::Affine(k) => k.n_cond,
            Kernel::Lookup(k) => k.n_cond,
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            Kernel::Affine(k) => k.n_out,
            Kernel::Lookup(k) => k.n_out,
        }
    }

    /// `obs[s]` is the observation fed to slot `s`, or `None` when it does not
    /// exist (e.g. the token before the first one).
    pub fn eval(&self, g: &mut Graph<'_>, obs: &[Option<Var>]) -> Result<Var> {
        match self {
            Kernel::Affine(k) => k.eval(g, obs),
            Kernel::Lookup(k) => k.eval(g, obs),
        }
    }
}

/// Feedforward kernel over `[obs_1, .., obs_S, one-hot(cond)]`.
///
/// Without hidden layers this is `act(W_obs y + W_state[cond] + b)`, the
/// logistic-regression form; with hidden widths, `tanh` layers precede a
/// final affine map and the positive activation.
#[derive(Debug, Clone)]
pub struct AffineKernel {
    pub n_cond: usize,
    pub n_out: usize,
    /// One `[width, d_s]` matrix per observation slot.
    pub obs_weights: Vec<ParamId>,
    /// `[n_cond, width]`: the first layer's weights on the one-hot state.
    pub state_weight: ParamId,
    pub bias: ParamId,
    /// Subsequent layers as `([in, out] weight, [out] bias)`.
    pub hidden: Vec<(ParamId, ParamId)>,
    pub activation: Activation,
}

impl AffineKernel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        obs_dims: &[usize],
        n_cond: usize,
        n_out: usize,
        hidden: &[usize],
        activation: Activation,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let first = hidden.first().copied().unwrap_or(n_out);
        let fan_in = obs_dims.iter().sum::<usize>() + n_cond;
        let obs_weights = obs_dims
            .iter()
            .enumerate()
            .map(|(s, &d)| store.add_uniform(format!("{prefix}.w_obs{s}"), &[first, d], fan_in, group, rng))
            .collect();
        let state_weight = store.add_uniform(format!("{prefix}.w_state"), &[n_cond, first], fan_in, group, rng);
        let bias = store.add_uniform(format!("{prefix}.b"), &[first], fan_in, group, rng);
        let mut layers = Vec::new();
        if !hidden.is_empty() {
            let mut width = first;
            for (k, &next) in hidden.iter().skip(1).chain(std::iter::once(&n_out)).enumerate() {
                let w = store.add_uniform(format!("{prefix}.w{}", k + 1), &[width, next], width, group, rng);
                let b = store.add_uniform(format!("{prefix}.b{}", k + 1), &[next], width, group, rng);
                layers.push((w, b));
                width = next;
            }
        }
        AffineKernel {
            n_cond,
            n_out,
            obs_weights,
            state_weight,
            bias,
            hidden: layers,
            activation,
        }
    }

    fn eval(&self, g: &mut Graph<'_>, obs: &[Option<Var>]) -> Result<Var> {
        if obs.len() != self.obs_weights.len() {
            return Err(NnError::InvalidSpec(format!(
                "kernel expects {} observation slots, got {}",
                self.obs_weights.len(),
                obs.len()
            )));
        }
        let mut shift = g.param(self.bias);
        for (&w, x) in self.obs_weights.iter().zip(obs) {
            if let Some(x) = *x {
                let w = g.param(w);
                let wx = g.tape.matmul(w, x)?;
                shift = g.tape.add(shift, wx)?;
            }
        }
        let state = g.param(self.state_weight);
        let mut pre = g.tape.add(state, shift)?;
        for &(w, b) in &self.hidden {
            let h = g.tape.tanh(pre);
            let (w, b) = (g.param(w), g.param(b));
            let z = g.tape.matmul(h, w)?;
            pre = g.tape.add(z, b)?;
        }
        Ok(self.activation.apply(g, pre))
    }
}

/// Table lookup `f(symbols) -> [n_cond, n_out]`, where each slot's symbol is
/// the hot index of a one-hot observation (`None` for a missing slot).
pub type LookupFn = dyn Fn(&[Option<usize>]) -> Array2<f64> + Send + Sync;

/// Fixed kernel reading its values from a table; used to embed known
/// probabilistic models into the neural layers.
#[derive(Clone)]
pub struct LookupKernel {
    pub n_cond: usize,
    pub n_out: usize,
    pub table: Arc<LookupFn>,
}

impl fmt::Debug for LookupKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LookupKernel")
            .field("n_cond", &self.n_cond)
            .field("n_out", &self.n_out)
            .finish_non_exhaustive()
    }
}

impl LookupKernel {
    pub fn new(n_cond: usize, n_out: usize, table: impl Fn(&[Option<usize>]) -> Array2<f64> + Send + Sync + 'static) -> Self {
        LookupKernel {
            n_cond,
            n_out,
            table: Arc::new(table),
        }
    }

    fn eval(&self, g: &mut Graph<'_>, obs: &[Option<Var>]) -> Result<Var> {
        let mut symbols = Vec::with_capacity(obs.len());
        for x in obs {
            symbols.push(match x {
                None => None,
                Some(v) => Some(hot_index(g.tape.value(*v)).ok_or(NnError::NotOneHot)?),
            });
        }
        let m = (self.table)(&symbols);
        if m.dim() != (self.n_cond, self.n_out) {
            return Err(NnError::InvalidSpec("lookup table returned the wrong shape".into()));
        }
        Ok(g.tape.constant(vec![self.n_cond, self.n_out], m.iter().copied().collect())?)
    }
}

fn hot_index(v: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &x) in v.iter().enumerate() {
        if x == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if x != 0.0 {
            return None;
        }
    }
    hot
}

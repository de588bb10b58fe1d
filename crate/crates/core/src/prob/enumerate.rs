use ndarray::{Array1, Array2};

use super::{check_obs, ChainKind, GenerativeHmmParams, InferenceError, PosteriorMatrix, Result};

pub const DEFAULT_ENUMERATION_CAP: usize = 8;

/// `p(x_{1:T}, y_{1:T})` under the exact factorisation of `kind`.
pub fn joint_probability(kind: ChainKind, params: &GenerativeHmmParams, x: &[usize], y: &[usize]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(InferenceError::InvalidParams("hidden and observed paths differ in length".into()));
    }
    if x.is_empty() {
        return Err(InferenceError::EmptySequence);
    }
    let b = &params.b;
    let mut p = params.pi[x[0]] * b[[x[0], y[0]]];
    match kind {
        ChainKind::Hmm => {
            for t in 1..x.len() {
                p *= params.a[[x[t - 1], x[t]]] * b[[x[t], y[t]]];
            }
        }
        ChainKind::Hmm2 => {
            let a2 = params.order2.as_ref().ok_or(InferenceError::MissingTable("order-2 transition"))?;
            for t in 1..x.len() {
                let step = if t == 1 {
                    params.a[[x[0], x[1]]]
                } else {
                    a2[[x[t - 2], x[t - 1], x[t]]]
                };
                p *= step * b[[x[t], y[t]]];
            }
        }
        ChainKind::HmmCn => {
            let cn = params.cn.as_ref().ok_or(InferenceError::MissingTable("complexified-noise"))?;
            for t in 1..x.len() {
                p *= cn.transition[[x[t - 1], y[t - 1], x[t]]] * cn.pair_emission[[x[t - 1], x[t], y[t]]];
            }
        }
    }
    Ok(p)
}

/// Advances a base-`n` odometer; returns false after the last configuration.
fn next_path(path: &mut [usize], n: usize) -> bool {
    for digit in path.iter_mut().rev() {
        *digit += 1;
        if *digit < n {
            return true;
        }
        *digit = 0;
    }
    false
}

/// Posterior marginals by summing the joint law over all `N^T` hidden paths.
pub fn enumerate_posteriors(
    kind: ChainKind,
    params: &GenerativeHmmParams,
    obs: &[usize],
    cap: usize,
) -> Result<PosteriorMatrix> {
    check_obs(obs, params.n_obs())?;
    if obs.len() > cap {
        return Err(InferenceError::CapExceeded { len: obs.len(), cap });
    }
    params.validate(kind)?;
    let n = params.n_states();
    let t_len = obs.len();
    let mut w = Array2::zeros((t_len, n));
    let mut path = vec![0; t_len];
    loop {
        let p = joint_probability(kind, params, &path, obs)?;
        for (t, &i) in path.iter().enumerate() {
            w[[t, i]] += p;
        }
        if !next_path(&mut path, n) {
            break;
        }
    }
    if w.row(0).sum() == 0.0 {
        return Err(InferenceError::ZeroProbability { position: 0 });
    }
    PosteriorMatrix::from_weights(w)
}

/// Marginal law of `y_position` in sequences of length `len`, by summing the
/// joint over every hidden and observed path.
pub fn enumerate_observation_marginal(
    kind: ChainKind,
    params: &GenerativeHmmParams,
    len: usize,
    position: usize,
    cap: usize,
) -> Result<Array1<f64>> {
    if len > cap {
        return Err(InferenceError::CapExceeded { len, cap });
    }
    if position >= len {
        return Err(InferenceError::SequenceTooShort { len, min: position + 1 });
    }
    let (n, m) = (params.n_states(), params.n_obs());
    let mut out = Array1::zeros(m);
    let mut y = vec![0; len];
    loop {
        let mut x = vec![0; len];
        loop {
            out[y[position]] += joint_probability(kind, params, &x, &y)?;
            if !next_path(&mut x, n) {
                break;
            }
        }
        if !next_path(&mut y, m) {
            break;
        }
    }
    Ok(out)
}

//! Entropic forward-backward recursions.
//!
//! The recursions never touch `b`: they run on `pi`, `a` and the posterior
//! emission tables `L_y(i) = p(x_t = i | y_t = y)`, which is what later lets
//! a neural network stand in for them.

use ndarray::{Array1, Array2, Array3, ArrayViewMut1, ArrayViewMut2};

use super::{check_obs, ChainTables, EntropicHmmParams, InferenceError, PairTables, PosteriorMatrix, Result};

/// Which recursion a table row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Forward,
    Backward,
}

/// How each freshly computed forward/backward row is rescaled.
///
/// Any positive per-step factor leaves the posterior unchanged, so the
/// choice only matters for numerical range and for inspecting the tables.
#[derive(Clone, Copy, Default)]
pub enum Rescale<'a> {
    /// Divide each row (or pairwise table) by its sum.
    #[default]
    Normalize,
    /// Keep the raw entropic values.
    Raw,
    /// Multiply the row computed at position `t` by `f(pass, t)`.
    Custom(&'a dyn Fn(Pass, usize) -> f64),
}

impl std::fmt::Debug for Rescale<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rescale::Normalize => write!(f, "Normalize"),
            Rescale::Raw => write!(f, "Raw"),
            Rescale::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Rescale<'_> {
    fn apply_row(&self, pass: Pass, t: usize, mut row: ArrayViewMut1<'_, f64>) -> Result<()> {
        let s = row.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(InferenceError::Degenerate { position: t });
        }
        match self {
            Rescale::Normalize => row.mapv_inplace(|v| v / s),
            Rescale::Raw => {}
            Rescale::Custom(f) => {
                let c = f(pass, t);
                row.mapv_inplace(|v| v * c);
            }
        }
        Ok(())
    }

    fn apply_table(&self, pass: Pass, t: usize, mut table: ArrayViewMut2<'_, f64>) -> Result<()> {
        let s = table.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(InferenceError::Degenerate { position: t });
        }
        match self {
            Rescale::Normalize => table.mapv_inplace(|v| v / s),
            Rescale::Raw => {}
            Rescale::Custom(f) => {
                let c = f(pass, t);
                table.mapv_inplace(|v| v * c);
            }
        }
        Ok(())
    }
}

/// `L_y(i) / pi(i)`, checking that every `pi(i)` is positive.
fn emission_ratio(params: &EntropicHmmParams) -> Result<Array2<f64>> {
    if let Some(i) = params.pi.iter().position(|&p| !(p > 0.0)) {
        return Err(InferenceError::Parameterization(format!("pi({i}) must be positive")));
    }
    let mut r = params.l.clone();
    for mut row in r.rows_mut() {
        row.zip_mut_with(&params.pi, |v, &p| *v /= p);
    }
    Ok(r)
}

fn check_entropic(params: &EntropicHmmParams, obs: &[usize]) -> Result<()> {
    check_obs(obs, params.n_obs())?;
    let n = params.n_states();
    if params.a.dim() != (n, n) || params.l.ncols() != n {
        return Err(InferenceError::InvalidParams("entropic tables have inconsistent sizes".into()));
    }
    Ok(())
}

/// Entropic forward-backward tables for the plain HMM.
///
/// `alpha_1 = L_{y_1}`,
/// `alpha_{t+1}(i) = L_{y_{t+1}}(i) / pi(i) * sum_j alpha_t(j) a_j(i)`,
/// `beta_T = 1`,
/// `beta_t(i) = sum_j beta_{t+1}(j) a_i(j) L_{y_{t+1}}(j) / pi(j)`.
pub fn efb_tables(params: &EntropicHmmParams, obs: &[usize], rescale: Rescale<'_>) -> Result<ChainTables> {
    check_entropic(params, obs)?;
    let ratio = emission_ratio(params)?;
    let (n, t_len) = (params.n_states(), obs.len());
    let a = &params.a;

    let mut alpha = Array2::zeros((t_len, n));
    alpha.row_mut(0).assign(&params.l.row(obs[0]));
    rescale.apply_row(Pass::Forward, 0, alpha.row_mut(0))?;
    for t in 1..t_len {
        let spread = alpha.row(t - 1).dot(a);
        let row = Array1::from_iter((0..n).map(|i| spread[i] * ratio[[obs[t], i]]));
        alpha.row_mut(t).assign(&row);
        rescale.apply_row(Pass::Forward, t, alpha.row_mut(t))?;
    }

    let mut beta = Array2::ones((t_len, n));
    rescale.apply_row(Pass::Backward, t_len - 1, beta.row_mut(t_len - 1))?;
    for t in (0..t_len - 1).rev() {
        let weighted = Array1::from_iter((0..n).map(|j| beta[[t + 1, j]] * ratio[[obs[t + 1], j]]));
        beta.row_mut(t).assign(&a.dot(&weighted));
        rescale.apply_row(Pass::Backward, t, beta.row_mut(t))?;
    }
    Ok(ChainTables { alpha, beta })
}

pub fn efb(params: &EntropicHmmParams, obs: &[usize]) -> Result<PosteriorMatrix> {
    efb_tables(params, obs, Rescale::Normalize)?.posterior()
}

/// Entropic forward-backward over pairs `(x_{t-1}, x_t)` for the order-2 HMM.
///
/// Tables are indexed `[t, j, i]`; slice `t = 0` is unused. Requires `T >= 2`.
pub fn efb2_tables(params: &EntropicHmmParams, obs: &[usize], rescale: Rescale<'_>) -> Result<PairTables> {
    check_entropic(params, obs)?;
    let a2 = params.order2.as_ref().ok_or(InferenceError::MissingTable("order-2 transition"))?;
    let (n, t_len) = (params.n_states(), obs.len());
    if t_len < 2 {
        return Err(InferenceError::SequenceTooShort { len: t_len, min: 2 });
    }
    if a2.dim() != (n, n, n) {
        return Err(InferenceError::InvalidParams("order-2 table must be N x N x N".into()));
    }
    let ratio = emission_ratio(params)?;
    let l = &params.l;

    let mut alpha = Array3::zeros((t_len, n, n));
    for j in 0..n {
        for i in 0..n {
            alpha[[1, j, i]] = l[[obs[0], j]] * params.a[[j, i]] * ratio[[obs[1], i]];
        }
    }
    rescale.apply_table(Pass::Forward, 1, alpha.index_axis_mut(ndarray::Axis(0), 1))?;
    for t in 1..t_len - 1 {
        for j in 0..n {
            for i in 0..n {
                let s: f64 = (0..n).map(|k| alpha[[t, k, j]] * a2[[k, j, i]]).sum();
                alpha[[t + 1, j, i]] = s * ratio[[obs[t + 1], i]];
            }
        }
        rescale.apply_table(Pass::Forward, t + 1, alpha.index_axis_mut(ndarray::Axis(0), t + 1))?;
    }

    let mut beta = Array3::zeros((t_len, n, n));
    beta.index_axis_mut(ndarray::Axis(0), t_len - 1).fill(1.0);
    rescale.apply_table(Pass::Backward, t_len - 1, beta.index_axis_mut(ndarray::Axis(0), t_len - 1))?;
    for t in (1..t_len - 1).rev() {
        for j in 0..n {
            for i in 0..n {
                beta[[t, j, i]] = (0..n)
                    .map(|k| beta[[t + 1, i, k]] * a2[[j, i, k]] * ratio[[obs[t + 1], k]])
                    .sum();
            }
        }
        rescale.apply_table(Pass::Backward, t, beta.index_axis_mut(ndarray::Axis(0), t))?;
    }
    Ok(PairTables { alpha, beta })
}

pub fn efb2(params: &EntropicHmmParams, obs: &[usize]) -> Result<PosteriorMatrix> {
    efb2_tables(params, obs, Rescale::Normalize)?.posterior()
}

/// Entropic forward-backward for the HMM with complexified noise.
///
/// `alpha_{t+1}(i) = sum_j alpha_t(j) I_{j,y_t}(i) L_{y_{t+1}}(i) J_{i,y_{t+1}}(j) / (pi(j) a_j(i))`
/// and symmetrically for `beta`.
pub fn efb_cn_tables(params: &EntropicHmmParams, obs: &[usize], rescale: Rescale<'_>) -> Result<ChainTables> {
    check_entropic(params, obs)?;
    let ci = params.cn_i.as_ref().ok_or(InferenceError::MissingTable("I (complexified-noise)"))?;
    let cj = params.cn_j.as_ref().ok_or(InferenceError::MissingTable("J (complexified-noise)"))?;
    let (n, m, t_len) = (params.n_states(), params.n_obs(), obs.len());
    if ci.dim() != (n, m, n) || cj.dim() != (n, m, n) {
        return Err(InferenceError::InvalidParams("I and J tables must be N x M x N".into()));
    }
    // joint[j, i] = pi(j) a_j(i) = p(x_t = j, x_{t+1} = i)
    let mut joint = params.a.clone();
    for j in 0..n {
        for i in 0..n {
            joint[[j, i]] *= params.pi[j];
            if !(joint[[j, i]] > 0.0) {
                return Err(InferenceError::Parameterization(format!(
                    "pi({j}) a_{j}({i}) must be positive"
                )));
            }
        }
    }
    // kernel(t)[j, i] couples x_t = j to x_{t+1} = i
    let kernel = |t: usize, j: usize, i: usize| {
        let (y, y_next) = (obs[t], obs[t + 1]);
        ci[[j, y, i]] * params.l[[y_next, i]] * cj[[i, y_next, j]] / joint[[j, i]]
    };

    let mut alpha = Array2::zeros((t_len, n));
    alpha.row_mut(0).assign(&params.l.row(obs[0]));
    rescale.apply_row(Pass::Forward, 0, alpha.row_mut(0))?;
    for t in 0..t_len - 1 {
        for i in 0..n {
            alpha[[t + 1, i]] = (0..n).map(|j| alpha[[t, j]] * kernel(t, j, i)).sum();
        }
        rescale.apply_row(Pass::Forward, t + 1, alpha.row_mut(t + 1))?;
    }

    let mut beta = Array2::ones((t_len, n));
    rescale.apply_row(Pass::Backward, t_len - 1, beta.row_mut(t_len - 1))?;
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            beta[[t, i]] = (0..n).map(|j| beta[[t + 1, j]] * kernel(t, i, j)).sum();
        }
        rescale.apply_row(Pass::Backward, t, beta.row_mut(t))?;
    }
    Ok(ChainTables { alpha, beta })
}

pub fn efb_cn(params: &EntropicHmmParams, obs: &[usize]) -> Result<PosteriorMatrix> {
    efb_cn_tables(params, obs, Rescale::Normalize)?.posterior()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{classic_fb, derive_entropic, enumerate_posteriors, ChainKind, GenerativeHmmParams};
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_position_returns_l_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GenerativeHmmParams::random(ChainKind::HmmCn, 3, 2, &mut rng);
        let e = derive_entropic(&p).unwrap();
        for post in [efb(&e, &[1]).unwrap(), efb_cn(&e, &[1]).unwrap()] {
            for i in 0..3 {
                assert!((post.get(0, i) - e.l[[1, i]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_params_give_uniform_posteriors() {
        let e = EntropicHmmParams::uniform(3, 4);
        let obs = [0, 3, 2, 1];
        for post in [efb(&e, &obs).unwrap(), efb2(&e, &obs).unwrap(), efb_cn(&e, &obs).unwrap()] {
            assert!(post.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        let two = efb2(&e, &[1, 2]).unwrap();
        assert!(two.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn efb_matches_classic_fb() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 3, 3, &mut rng);
        let e = derive_entropic(&p).unwrap();
        let obs = [2, 0, 1, 1, 0, 2];
        assert!(efb(&e, &obs).unwrap().max_abs_diff(&classic_fb(&p, &obs).unwrap()) < 1e-10);
    }

    #[test]
    fn order2_collapses_to_order1() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 3, 2, &mut rng);
        let mut e = derive_entropic(&p).unwrap();
        let mut a2 = Array3::zeros((3, 3, 3));
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    a2[[k, j, i]] = p.a[[j, i]];
                }
            }
        }
        e.order2 = Some(a2);
        let obs = [0, 1, 1, 0, 1];
        assert!(efb2(&e, &obs).unwrap().max_abs_diff(&efb(&e, &obs).unwrap()) < 1e-12);
    }

    #[test]
    fn efb2_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GenerativeHmmParams::random(ChainKind::Hmm2, 3, 2, &mut rng);
        let e = derive_entropic(&p).unwrap();
        let obs = [1, 0, 0, 1, 1];
        let oracle = enumerate_posteriors(ChainKind::Hmm2, &p, &obs, 8).unwrap();
        assert!(efb2(&e, &obs).unwrap().max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn cn_degenerates_to_efb_on_plain_hmm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 3, 2, &mut rng);
        let e = derive_entropic(&p).unwrap();
        let obs = [1, 1, 0, 1, 0];
        assert!(efb_cn(&e, &obs).unwrap().max_abs_diff(&efb(&e, &obs).unwrap()) < 1e-12);
    }

    #[test]
    fn cn_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GenerativeHmmParams::random(ChainKind::HmmCn, 2, 2, &mut rng);
        let e = derive_entropic(&p).unwrap();
        let obs = [0, 1, 1, 0, 1];
        let oracle = enumerate_posteriors(ChainKind::HmmCn, &p, &obs, 8).unwrap();
        assert!(efb_cn(&e, &obs).unwrap().max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn efb2_needs_two_positions() {
        let e = EntropicHmmParams::uniform(2, 2);
        assert_eq!(efb2(&e, &[0]), Err(InferenceError::SequenceTooShort { len: 1, min: 2 }));
    }

    #[test]
    fn zero_pi_is_a_parameterisation_error() {
        let mut e = EntropicHmmParams::uniform(2, 2);
        e.pi[0] = 0.0;
        assert!(matches!(efb(&e, &[0, 1]), Err(InferenceError::Parameterization(_))));
        assert!(matches!(efb_cn(&e, &[0, 1]), Err(InferenceError::Parameterization(_))));
    }

    #[test]
    fn degenerate_l_is_reported() {
        let mut e = EntropicHmmParams::uniform(2, 2);
        e.l.row_mut(1).fill(0.0);
        assert_eq!(efb(&e, &[0, 1]), Err(InferenceError::Degenerate { position: 1 }));
    }

    #[test]
    fn custom_rescaling_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 4, 3, &mut rng);
        let e = derive_entropic(&p).unwrap();
        let obs = [0, 2, 1, 1, 2, 0];
        let wild = |pass: Pass, t: usize| match pass {
            Pass::Forward => 10f64.powi(t as i32 * 3 - 7),
            Pass::Backward => 0.5 + t as f64 * 17.0,
        };
        let base = efb_tables(&e, &obs, Rescale::Normalize).unwrap().posterior().unwrap();
        let scaled = efb_tables(&e, &obs, Rescale::Custom(&wild)).unwrap().posterior().unwrap();
        let raw = efb_tables(&e, &obs, Rescale::Raw).unwrap().posterior().unwrap();
        assert!(base.max_abs_diff(&scaled) < 1e-12);
        assert!(base.max_abs_diff(&raw) < 1e-12);
    }
}

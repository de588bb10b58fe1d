use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{ChainKind, InferenceError, Result};

const STOCHASTIC_TOL: f64 = 1e-9;

/// Observation-dependent transition law of the HMM with complexified noise.
///
/// The pair `(x_t, y_t)` is a stationary Markov chain with
/// `p(x_{t+1}, y_{t+1} | x_t, y_t) = transition[x_t, y_t, x_{t+1}] *
/// pair_emission[x_t, x_{t+1}, y_{t+1}]`. Conditionally on the hidden path,
/// each `y_t` then depends on `x_{t-1}`, `x_t` and `x_{t+1}` only.
#[derive(Debug, Clone, PartialEq)]
pub struct CnLaw {
    /// `[j, y, i] = p(x_{t+1} = i | x_t = j, y_t = y)`.
    pub transition: Array3<f64>,
    /// `[j, i, y] = p(y_{t+1} = y | x_t = j, x_{t+1} = i)`.
    pub pair_emission: Array3<f64>,
}

/// Generative parameterisation `(pi, a, b)` plus the optional order-2 and
/// complexified-noise tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeHmmParams {
    /// `p(x_1 = i)`; the per-step marginal for the stationary chains built here.
    pub pi: Array1<f64>,
    /// `[i, j] = p(x_{t+1} = j | x_t = i)`.
    pub a: Array2<f64>,
    /// `[i, y] = p(y_t = y | x_t = i)`.
    pub b: Array2<f64>,
    /// `[i, j, k] = p(x_{t+2} = k | x_t = i, x_{t+1} = j)`.
    pub order2: Option<Array3<f64>>,
    pub cn: Option<CnLaw>,
}

/// Entropic parameterisation used by the EFB recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropicHmmParams {
    pub pi: Array1<f64>,
    pub a: Array2<f64>,
    /// `[y, i] = p(x_t = i | y_t = y)`.
    pub l: Array2<f64>,
    pub order2: Option<Array3<f64>>,
    /// `[j, y, i] = p(x_{t+1} = i | x_t = j, y_t = y)`.
    pub cn_i: Option<Array3<f64>>,
    /// `[j, y, i] = p(x_t = i | x_{t+1} = j, y_{t+1} = y)`.
    pub cn_j: Option<Array3<f64>>,
}

pub(crate) fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|v| v / s).collect()
}

fn random_stochastic<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for mut row in m.axis_iter_mut(Axis(0)) {
        row.assign(&Array1::from(dirichlet_row(rng, cols)));
    }
    m
}

/// Left fixed point `v P = v` of an irreducible row-stochastic matrix.
///
/// Solves `(P - I)^T v = 0` with the normalisation `sum(v) = 1` replacing the
/// last equation, by Gaussian elimination with partial pivoting.
pub fn stationary_distribution(p: &Array2<f64>) -> Array1<f64> {
    let n = p.nrows();
    let mut m = Array2::<f64>::zeros((n, n + 1));
    for r in 0..n {
        for c in 0..n {
            m[[r, c]] = p[[c, r]] - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..n {
        m[[n - 1, c]] = 1.0;
    }
    m[[n - 1, n]] = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[[x, col]].abs().total_cmp(&m[[y, col]].abs()))
            .expect("non-empty");
        if pivot != col {
            for c in 0..=n {
                m.swap([pivot, c], [col, c]);
            }
        }
        let d = m[[col, col]];
        for r in 0..n {
            if r != col {
                let f = m[[r, col]] / d;
                if f != 0.0 {
                    for c in col..=n {
                        m[[r, c]] -= f * m[[col, c]];
                    }
                }
            }
        }
    }
    let mut v = Array1::from_iter((0..n).map(|r| (m[[r, n]] / m[[r, r]]).max(0.0)));
    let s = v.sum();
    v.mapv_inplace(|x| x / s);
    v
}

fn check_stochastic(name: &str, values: ndarray::ArrayViewD<'_, f64>) -> Result<()> {
    let last = values.ndim() - 1;
    for row in values.lanes(Axis(last)) {
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(InferenceError::InvalidParams(format!("{name} has a negative or non-finite entry")));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(InferenceError::InvalidParams(format!("{name} row sums to {s}, not 1")));
        }
    }
    Ok(())
}

impl GenerativeHmmParams {
    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_obs(&self) -> usize {
        self.b.ncols()
    }

    /// Plain HMM with `pi` set to the stationary law of `a`.
    pub fn stationary_hmm(a: Array2<f64>, b: Array2<f64>) -> Self {
        let pi = stationary_distribution(&a);
        GenerativeHmmParams {
            pi,
            a,
            b,
            order2: None,
            cn: None,
        }
    }

    /// Order-2 HMM whose `pi` and `a` are the stationary one- and two-step
    /// marginals of the second-order chain `order2`.
    pub fn stationary_hmm2(order2: Array3<f64>, b: Array2<f64>) -> Self {
        let n = order2.dim().0;
        let mut pair_kernel = Array2::zeros((n * n, n * n));
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    pair_kernel[[k * n + j, j * n + i]] = order2[[k, j, i]];
                }
            }
        }
        let rho = stationary_distribution(&pair_kernel).into_shape_with_order((n, n)).expect("n*n");
        let pi = rho.sum_axis(Axis(1));
        let mut a = rho.clone();
        for (j, mut row) in a.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v / pi[j]);
        }
        GenerativeHmmParams {
            pi,
            a,
            b,
            order2: Some(order2),
            cn: None,
        }
    }

    /// Complexified-noise chain started from the stationary law of the
    /// `(x_t, y_t)` pair process.
    pub fn stationary_cn(transition: Array3<f64>, pair_emission: Array3<f64>) -> Self {
        let (n, m, _) = transition.dim();
        let mut kernel = Array2::zeros((n * m, n * m));
        for j in 0..n {
            for y in 0..m {
                for i in 0..n {
                    for y2 in 0..m {
                        kernel[[j * m + y, i * m + y2]] = transition[[j, y, i]] * pair_emission[[j, i, y2]];
                    }
                }
            }
        }
        let mu = stationary_distribution(&kernel).into_shape_with_order((n, m)).expect("n*m");
        let pi = mu.sum_axis(Axis(1));
        let mut b = mu.clone();
        for (i, mut row) in b.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v / pi[i]);
        }
        let mut a = Array2::zeros((n, n));
        for j in 0..n {
            for i in 0..n {
                a[[j, i]] = (0..m).map(|y| mu[[j, y]] * transition[[j, y, i]]).sum::<f64>() / pi[j];
            }
        }
        GenerativeHmmParams {
            pi,
            a,
            b,
            order2: None,
            cn: Some(CnLaw {
                transition,
                pair_emission,
            }),
        }
    }

    /// Random stationary parameters with Dirichlet(1) rows.
    pub fn random<R: Rng + ?Sized>(kind: ChainKind, n_states: usize, n_obs: usize, rng: &mut R) -> Self {
        let n = n_states;
        match kind {
            ChainKind::Hmm => {
                let a = random_stochastic(rng, n, n);
                let b = random_stochastic(rng, n, n_obs);
                Self::stationary_hmm(a, b)
            }
            ChainKind::Hmm2 => {
                let order2 = random_stochastic(rng, n * n, n)
                    .into_shape_with_order((n, n, n))
                    .expect("n^3");
                let b = random_stochastic(rng, n, n_obs);
                Self::stationary_hmm2(order2, b)
            }
            ChainKind::HmmCn => {
                let transition = random_stochastic(rng, n * n_obs, n)
                    .into_shape_with_order((n, n_obs, n))
                    .expect("n*m*n");
                let pair_emission = random_stochastic(rng, n * n, n_obs)
                    .into_shape_with_order((n, n, n_obs))
                    .expect("n*n*m");
                Self::stationary_cn(transition, pair_emission)
            }
        }
    }

    /// Checks stochasticity of every table present and of the one `kind` needs.
    pub fn validate(&self, kind: ChainKind) -> Result<()> {
        let n = self.n_states();
        if self.a.dim() != (n, n) || self.b.nrows() != n || n == 0 || self.n_obs() == 0 {
            return Err(InferenceError::InvalidParams("inconsistent table sizes".into()));
        }
        check_stochastic("pi", self.pi.view().into_dyn())?;
        check_stochastic("a", self.a.view().into_dyn())?;
        check_stochastic("b", self.b.view().into_dyn())?;
        if let Some(a2) = &self.order2 {
            if a2.dim() != (n, n, n) {
                return Err(InferenceError::InvalidParams("order-2 table must be N x N x N".into()));
            }
            check_stochastic("order2", a2.view().into_dyn())?;
        }
        if let Some(cn) = &self.cn {
            let m = self.n_obs();
            if cn.transition.dim() != (n, m, n) || cn.pair_emission.dim() != (n, n, m) {
                return Err(InferenceError::InvalidParams("complexified-noise tables have wrong sizes".into()));
            }
            check_stochastic("cn transition", cn.transition.view().into_dyn())?;
            check_stochastic("cn pair emission", cn.pair_emission.view().into_dyn())?;
        }
        match kind {
            ChainKind::Hmm2 if self.order2.is_none() => Err(InferenceError::MissingTable("order-2 transition")),
            ChainKind::HmmCn if self.cn.is_none() => Err(InferenceError::MissingTable("complexified-noise")),
            _ => Ok(()),
        }
    }

    /// `p(y) = sum_i pi(i) b_i(y)`: the per-step observation marginal of a
    /// stationary chain.
    pub fn observation_marginal(&self) -> Array1<f64> {
        self.pi.dot(&self.b)
    }

    /// Two-slice joint `[x_t, y_t, x_{t+1}, y_{t+1}]` of a first-order pair
    /// process (plain HMM or complexified noise).
    pub fn two_slice_joint(&self) -> Option<Array4<f64>> {
        if self.order2.is_some() {
            return None;
        }
        let (n, m) = (self.n_states(), self.n_obs());
        let mut joint = Array4::zeros((n, m, n, m));
        for j in 0..n {
            for y in 0..m {
                let first = self.pi[j] * self.b[[j, y]];
                for i in 0..n {
                    for y2 in 0..m {
                        let step = match &self.cn {
                            Some(cn) => cn.transition[[j, y, i]] * cn.pair_emission[[j, i, y2]],
                            None => self.a[[j, i]] * self.b[[i, y2]],
                        };
                        joint[[j, y, i, y2]] = first * step;
                    }
                }
            }
        }
        Some(joint)
    }

    /// `p(y_t | x_{t-1}, x_t, x_{t+1})` for the complexified-noise law given
    /// the whole hidden path; missing neighbours at the boundaries are `None`.
    pub fn cn_conditional_emission(&self, prev: Option<usize>, cur: usize, next: Option<usize>) -> Result<Array1<f64>> {
        let cn = self.cn.as_ref().ok_or(InferenceError::MissingTable("complexified-noise"))?;
        let m = self.n_obs();
        let mut w = Array1::zeros(m);
        for y in 0..m {
            let incoming = match prev {
                Some(p) => cn.pair_emission[[p, cur, y]],
                None => self.b[[cur, y]],
            };
            let outgoing = next.map_or(1.0, |nx| cn.transition[[cur, y, nx]]);
            w[y] = incoming * outgoing;
        }
        let s = w.sum();
        if !(s > 0.0) {
            return Err(InferenceError::Parameterization("hidden configuration has zero probability".into()));
        }
        Ok(w / s)
    }
}

/// Bayes inversion of generative parameters into entropic ones.
///
/// `L_y(i) = pi(i) b_i(y) / p(y)`. The complexified-noise tables `I` and `J`
/// are marginals of the two-slice joint and are produced whenever the chain
/// is first order (plain HMM or complexified noise).
pub fn derive_entropic(params: &GenerativeHmmParams) -> Result<EntropicHmmParams> {
    if let Some(i) = params.pi.iter().position(|&p| !(p > 0.0)) {
        return Err(InferenceError::Parameterization(format!("state {i} has zero stationary mass")));
    }
    let (n, m) = (params.n_states(), params.n_obs());
    let py = params.observation_marginal();
    let mut l = Array2::zeros((m, n));
    for y in 0..m {
        if !(py[y] > 0.0) {
            return Err(InferenceError::ZeroMarginal { symbol: y });
        }
        for i in 0..n {
            l[[y, i]] = params.pi[i] * params.b[[i, y]] / py[y];
        }
    }
    let (cn_i, cn_j) = match params.two_slice_joint() {
        Some(joint) => {
            // I: condition on (x_t, y_t), marginalise y_{t+1}
            let first = joint.sum_axis(Axis(3)); // [j, y, i]
            let mut cn_i = first.clone();
            for j in 0..n {
                for y in 0..m {
                    let s: f64 = (0..n).map(|i| first[[j, y, i]]).sum();
                    for i in 0..n {
                        // an impossible (x_t, y_t) pair never carries forward
                        // mass; any stochastic row will do, so reuse a
                        cn_i[[j, y, i]] = if s > 0.0 { first[[j, y, i]] / s } else { params.a[[j, i]] };
                    }
                }
            }
            // J: condition on (x_{t+1}, y_{t+1}), marginalise y_t
            let second = joint.sum_axis(Axis(1)); // [x_t, x_{t+1}, y_{t+1}]
            let mut cn_j = Array3::zeros((n, m, n));
            for j in 0..n {
                for y in 0..m {
                    let s: f64 = (0..n).map(|i| second[[i, j, y]]).sum();
                    for i in 0..n {
                        cn_j[[j, y, i]] = if s > 0.0 {
                            second[[i, j, y]] / s
                        } else {
                            params.pi[i] * params.a[[i, j]] / params.pi[j]
                        };
                    }
                }
            }
            (Some(cn_i), Some(cn_j))
        }
        None => (None, None),
    };
    Ok(EntropicHmmParams {
        pi: params.pi.clone(),
        a: params.a.clone(),
        l,
        order2: params.order2.clone(),
        cn_i,
        cn_j,
    })
}

impl EntropicHmmParams {
    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_obs(&self) -> usize {
        self.l.nrows()
    }

    /// Uniform parameters: every table row is uniform.
    pub fn uniform(n_states: usize, n_obs: usize) -> Self {
        let n = n_states;
        let u = 1.0 / n as f64;
        EntropicHmmParams {
            pi: Array1::from_elem(n, u),
            a: Array2::from_elem((n, n), u),
            l: Array2::from_elem((n_obs, n), u),
            order2: Some(Array3::from_elem((n, n, n), u)),
            cn_i: Some(Array3::from_elem((n, n_obs, n), u)),
            cn_j: Some(Array3::from_elem((n, n_obs, n), u)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stationary_of_two_state_chain() {
        let a = array![[0.9, 0.1], [0.3, 0.7]];
        let pi = stationary_distribution(&a);
        assert_abs_diff_eq!(pi[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn random_params_are_valid_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in ChainKind::ALL {
            let p = GenerativeHmmParams::random(kind, 3, 2, &mut rng);
            p.validate(kind).unwrap();
            let next = p.pi.dot(&p.a);
            for i in 0..3 {
                assert_abs_diff_eq!(next[i], p.pi[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn uniform_model_gives_uniform_l() {
        let p = GenerativeHmmParams::stationary_hmm(Array2::from_elem((2, 2), 0.5), Array2::from_elem((2, 3), 1.0 / 3.0));
        let e = derive_entropic(&p).unwrap();
        assert!(e.l.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn identity_emissions_give_one_hot_l() {
        let a = array![[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.3, 0.3, 0.4]];
        let mut p = GenerativeHmmParams::stationary_hmm(a, Array2::eye(3));
        p.pi = Array1::from_elem(3, 1.0 / 3.0);
        let e = derive_entropic(&p).unwrap();
        assert_eq!(e.l, Array2::<f64>::eye(3));
    }

    #[test]
    fn zero_marginal_is_reported() {
        let b = array![[1.0, 0.0], [1.0, 0.0]];
        let p = GenerativeHmmParams::stationary_hmm(Array2::from_elem((2, 2), 0.5), b);
        assert_eq!(derive_entropic(&p), Err(InferenceError::ZeroMarginal { symbol: 1 }));
    }

    #[test]
    fn hmm_tables_reduce_to_transition_and_its_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 3, 2, &mut rng);
        let e = derive_entropic(&p).unwrap();
        let (ci, cj) = (e.cn_i.unwrap(), e.cn_j.unwrap());
        for j in 0..3 {
            for y in 0..2 {
                for i in 0..3 {
                    assert_abs_diff_eq!(ci[[j, y, i]], p.a[[j, i]], epsilon = 1e-14);
                    let rev = p.pi[i] * p.a[[i, j]] / p.pi[j];
                    assert_abs_diff_eq!(cj[[j, y, i]], rev, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn validate_rejects_bad_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GenerativeHmmParams::random(ChainKind::Hmm, 2, 2, &mut rng);
        p.a[[0, 0]] += 0.1;
        assert!(matches!(p.validate(ChainKind::Hmm), Err(InferenceError::InvalidParams(_))));
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 2, 2, &mut rng);
        assert!(matches!(p.validate(ChainKind::Hmm2), Err(InferenceError::MissingTable(_))));
    }
}

use ndarray::{Array2, Array3};

use super::{check_obs, ChainKind, ChainTables, GenerativeHmmParams, InferenceError, PairTables, Result, Tables};

/// Longest sequence accepted: past this the raw probabilities drift toward underflow.
pub const UNNORMALIZED_CAP: usize = 20;

/// Forward/backward tables holding actual probabilities rather than entropic ratios.
///
/// * plain HMM and complexified noise: `alpha'_t(i) = p(x_t = i, y_{1:t})` and
///   `beta'_t(i) = p(y_{t+1:T} | x_t = i, y_t)`;
/// * order-2 HMM: `alpha'_t(j, i) = p(x_{t-1} = j, x_t = i, y_{1:t})` and
///   `beta'_t(j, i) = p(y_{t+1:T} | x_{t-1} = j, x_t = i)`, with slice 0 unused.
///
/// Dividing by products of observation marginals recovers the raw entropic tables.
pub fn unnormalized_recursions(kind: ChainKind, params: &GenerativeHmmParams, obs: &[usize]) -> Result<Tables> {
    check_obs(obs, params.n_obs())?;
    if obs.len() > UNNORMALIZED_CAP {
        return Err(InferenceError::CapExceeded {
            len: obs.len(),
            cap: UNNORMALIZED_CAP,
        });
    }
    params.validate(kind)?;
    let (n, t_len) = (params.n_states(), obs.len());
    let b = &params.b;
    match kind {
        ChainKind::Hmm | ChainKind::HmmCn => {
            // step(t, j, i) = p(x_{t+1} = i, y_{t+1} | x_t = j, y_t)
            let step = |t: usize, j: usize, i: usize| match &params.cn {
                Some(cn) if kind == ChainKind::HmmCn => {
                    cn.transition[[j, obs[t], i]] * cn.pair_emission[[j, i, obs[t + 1]]]
                }
                _ => params.a[[j, i]] * b[[i, obs[t + 1]]],
            };
            let mut alpha = Array2::zeros((t_len, n));
            for i in 0..n {
                alpha[[0, i]] = params.pi[i] * b[[i, obs[0]]];
            }
            for t in 0..t_len - 1 {
                for i in 0..n {
                    alpha[[t + 1, i]] = (0..n).map(|j| alpha[[t, j]] * step(t, j, i)).sum();
                }
            }
            let mut beta = Array2::ones((t_len, n));
            for t in (0..t_len - 1).rev() {
                for i in 0..n {
                    beta[[t, i]] = (0..n).map(|j| step(t, i, j) * beta[[t + 1, j]]).sum();
                }
            }
            Ok(Tables::Chain(ChainTables { alpha, beta }))
        }
        ChainKind::Hmm2 => {
            if t_len < 2 {
                return Err(InferenceError::SequenceTooShort { len: t_len, min: 2 });
            }
            let a2 = params.order2.as_ref().ok_or(InferenceError::MissingTable("order-2 transition"))?;
            let mut alpha = Array3::zeros((t_len, n, n));
            for j in 0..n {
                for i in 0..n {
                    alpha[[1, j, i]] = params.pi[j] * b[[j, obs[0]]] * params.a[[j, i]] * b[[i, obs[1]]];
                }
            }
            for t in 1..t_len - 1 {
                for j in 0..n {
                    for i in 0..n {
                        let s: f64 = (0..n).map(|k| alpha[[t, k, j]] * a2[[k, j, i]]).sum();
                        alpha[[t + 1, j, i]] = s * b[[i, obs[t + 1]]];
                    }
                }
            }
            let mut beta = Array3::zeros((t_len, n, n));
            beta.index_axis_mut(ndarray::Axis(0), t_len - 1).fill(1.0);
            for t in (1..t_len - 1).rev() {
                for j in 0..n {
                    for i in 0..n {
                        beta[[t, j, i]] = (0..n)
                            .map(|k| beta[[t + 1, i, k]] * a2[[j, i, k]] * b[[k, obs[t + 1]]])
                            .sum();
                    }
                }
            }
            Ok(Tables::Pair(PairTables { alpha, beta }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{enumerate_posteriors, joint_probability};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn final_beta_is_one_and_cn_base_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = GenerativeHmmParams::random(ChainKind::HmmCn, 3, 2, &mut rng);
        let obs = [1, 0, 1, 1];
        let Tables::Chain(t) = unnormalized_recursions(ChainKind::HmmCn, &p, &obs).unwrap() else {
            panic!("chain tables expected");
        };
        assert!(t.beta.row(3).iter().all(|&v| v == 1.0));
        for i in 0..3 {
            assert_eq!(t.alpha[[0, i]], p.pi[i] * p.b[[i, 1]]);
        }
        let p2 = GenerativeHmmParams::random(ChainKind::Hmm2, 3, 2, &mut rng);
        let Tables::Pair(t2) = unnormalized_recursions(ChainKind::Hmm2, &p2, &obs).unwrap() else {
            panic!("pair tables expected");
        };
        assert!(t2.beta.index_axis(ndarray::Axis(0), 3).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forward_total_is_sequence_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for kind in ChainKind::ALL {
            let p = GenerativeHmmParams::random(kind, 2, 2, &mut rng);
            let obs = [0, 1, 1];
            let mut likelihood = 0.0;
            for x0 in 0..2 {
                for x1 in 0..2 {
                    for x2 in 0..2 {
                        likelihood += joint_probability(kind, &p, &[x0, x1, x2], &obs).unwrap();
                    }
                }
            }
            let total = match unnormalized_recursions(kind, &p, &obs).unwrap() {
                Tables::Chain(t) => t.alpha.row(2).sum(),
                Tables::Pair(t) => t.alpha.index_axis(ndarray::Axis(0), 2).sum(),
            };
            assert!((total - likelihood).abs() < 1e-15);
        }
    }

    #[test]
    fn posteriors_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for kind in ChainKind::ALL {
            let p = GenerativeHmmParams::random(kind, 3, 2, &mut rng);
            let obs = [1, 0, 0, 1, 1];
            let post = unnormalized_recursions(kind, &p, &obs).unwrap().posterior().unwrap();
            let oracle = enumerate_posteriors(kind, &p, &obs, 8).unwrap();
            assert!(post.max_abs_diff(&oracle) < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GenerativeHmmParams::random(ChainKind::Hmm, 2, 2, &mut rng);
        assert_eq!(
            unnormalized_recursions(ChainKind::Hmm, &p, &[0; 21]).unwrap_err(),
            InferenceError::CapExceeded { len: 21, cap: 20 }
        );
    }
}

use ndarray::{Array1, Array2};

use super::{check_obs, ChainKind, GenerativeHmmParams, InferenceError, PosteriorMatrix, Result};

/// Scaled forward-backward on the generative parameters of a plain HMM.
pub fn classic_fb(params: &GenerativeHmmParams, obs: &[usize]) -> Result<PosteriorMatrix> {
    check_obs(obs, params.n_obs())?;
    params.validate(ChainKind::Hmm)?;
    let n = params.n_states();
    let t_len = obs.len();
    let (a, b) = (&params.a, &params.b);

    let mut alpha = Array2::zeros((t_len, n));
    let mut scale = vec![0.0; t_len];
    for t in 0..t_len {
        let row: Array1<f64> = if t == 0 {
            Array1::from_iter((0..n).map(|i| params.pi[i] * b[[i, obs[0]]]))
        } else {
            let prev = alpha.row(t - 1).dot(a);
            Array1::from_iter((0..n).map(|i| prev[i] * b[[i, obs[t]]]))
        };
        let s = row.sum();
        if !(s > 0.0) {
            return Err(InferenceError::ZeroProbability { position: t });
        }
        scale[t] = s;
        alpha.row_mut(t).assign(&(row / s));
    }

    let mut beta = Array2::ones((t_len, n));
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            beta[[t, i]] = (0..n).map(|j| a[[i, j]] * b[[j, obs[t + 1]]] * beta[[t + 1, j]]).sum::<f64>() / scale[t + 1];
        }
    }
    PosteriorMatrix::from_weights(alpha * beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn deterministic_emissions_give_one_hot_rows() {
        let a = array![[0.6, 0.4], [0.3, 0.7]];
        let p = GenerativeHmmParams::stationary_hmm(a, Array2::eye(2));
        let post = classic_fb(&p, &[1, 0, 0, 1]).unwrap();
        assert_eq!(post.mpm(), vec![1, 0, 0, 1]);
        for t in 0..4 {
            assert!((post.row(t).iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_model_gives_uniform_rows() {
        let p = GenerativeHmmParams::stationary_hmm(Array2::from_elem((3, 3), 1.0 / 3.0), Array2::from_elem((3, 2), 0.5));
        let post = classic_fb(&p, &[0, 1, 0]).unwrap();
        assert!(post.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn impossible_sequence_is_reported() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let mut p = GenerativeHmmParams::stationary_hmm(a, Array2::eye(2));
        p.pi = array![0.5, 0.5];
        assert_eq!(classic_fb(&p, &[0, 1]), Err(InferenceError::ZeroProbability { position: 1 }));
    }
}

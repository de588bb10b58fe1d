//! Entropic layers whose kernels are lookup tables built from a known
//! probabilistic model, so that the layer reproduces exact EFB posteriors on
//! one-hot observations.

use ndarray::Array2;

use super::{Hnmc2Layer, HnmcCnLayer, HnmcLayer, Kernel, LookupKernel, NnError, Result};
use crate::prob::EntropicHmmParams;

fn ratio_table(p: &EntropicHmmParams) -> Result<Array2<f64>> {
    if p.pi.iter().any(|&v| !(v > 0.0)) {
        return Err(NnError::InvalidSpec("pi must be positive".into()));
    }
    let mut r = p.l.clone();
    for mut row in r.rows_mut() {
        row.zip_mut_with(&p.pi, |v, &q| *v /= q);
    }
    Ok(r)
}

fn symbol(obs: &[Option<usize>], slot: usize) -> usize {
    obs[slot].expect("observation slot is filled")
}

/// Kernel `a_j(i) L_y(i) / pi(i)` with initial state `pi`.
pub fn hnmc_from_entropic(p: &EntropicHmmParams) -> Result<HnmcLayer> {
    let n = p.n_states();
    let ratio = ratio_table(p)?;
    let a = p.a.clone();
    Ok(HnmcLayer {
        input_dim: p.n_obs(),
        n_states: n,
        kernel: Kernel::Lookup(LookupKernel::new(n, n, move |obs| {
            let y = symbol(obs, 0);
            Array2::from_shape_fn((n, n), |(j, i)| a[[j, i]] * ratio[[y, i]])
        })),
        initial_state: p.pi.to_vec(),
    })
}

/// Kernel `a2_{k,j}(i) L_y(i) / pi(i)` with the stationary pair law
/// `pi(k) a_k(j)` as initial pair state.
pub fn hnmc2_from_entropic(p: &EntropicHmmParams) -> Result<Hnmc2Layer> {
    let n = p.n_states();
    let ratio = ratio_table(p)?;
    let a2 = p
        .order2
        .clone()
        .ok_or_else(|| NnError::InvalidSpec("order-2 table missing".into()))?;
    let initial_pair = (0..n * n).map(|r| p.pi[r / n] * p.a[[r / n, r % n]]).collect();
    Ok(Hnmc2Layer {
        input_dim: p.n_obs(),
        n_states: n,
        kernel: Kernel::Lookup(LookupKernel::new(n * n, n, move |obs| {
            let y = symbol(obs, 0);
            Array2::from_shape_fn((n * n, n), |(r, i)| a2[[r / n, r % n, i]] * ratio[[y, i]])
        })),
        initial_pair,
    })
}

/// `net_i = I_{j,y_prev}(i) L_y(i) / a_j(i)` (just `L_y(i)` when there is no
/// previous token) and `net_j = J_{i,y}(j) / pi(j)`, with initial state `pi`.
pub fn hnmc_cn_from_entropic(p: &EntropicHmmParams) -> Result<HnmcCnLayer> {
    let n = p.n_states();
    let missing = || NnError::InvalidSpec("I/J tables missing".into());
    let (ci, cj) = (p.cn_i.clone().ok_or_else(missing)?, p.cn_j.clone().ok_or_else(missing)?);
    if p.a.iter().any(|&v| !(v > 0.0)) || p.pi.iter().any(|&v| !(v > 0.0)) {
        return Err(NnError::InvalidSpec("pi and a must be positive".into()));
    }
    let (a, l, pi) = (p.a.clone(), p.l.clone(), p.pi.clone());
    let net_i = LookupKernel::new(n, n, move |obs| {
        let y = symbol(obs, 1);
        Array2::from_shape_fn((n, n), |(j, i)| match obs[0] {
            Some(prev) => ci[[j, prev, i]] * l[[y, i]] / a[[j, i]],
            None => l[[y, i]],
        })
    });
    let net_j = LookupKernel::new(n, n, move |obs| {
        let y = symbol(obs, 0);
        Array2::from_shape_fn((n, n), |(i, j)| cj[[i, y, j]] / pi[j])
    });
    Ok(HnmcCnLayer {
        input_dim: p.n_obs(),
        n_states: n,
        net_i: Kernel::Lookup(net_i),
        net_j: Kernel::Lookup(net_j),
        initial_state: p.pi.to_vec(),
    })
}

/// One-hot rows for a symbol sequence over an alphabet of `m` symbols.
pub fn one_hot_rows(obs: &[usize], m: usize) -> Vec<Vec<f64>> {
    obs.iter()
        .map(|&y| {
            let mut r = vec![0.0; m];
            r[y] = 1.0;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, ParamStore};
    use crate::prob::{derive_entropic, efb, efb2, efb_cn, ChainKind, GenerativeHmmParams, PosteriorMatrix};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_output(run: impl Fn(&mut Graph<'_>, &[crate::autodiff::Var]) -> Vec<crate::autodiff::Var>, rows: &[Vec<f64>]) -> Array2<f64> {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let xs: Vec<_> = rows.iter().map(|r| g.tape.vector(r)).collect();
        let out = run(&mut g, &xs);
        let n = g.tape.value(out[0]).len();
        Array2::from_shape_fn((out.len(), n), |(t, i)| g.tape.value(out[t])[i])
    }

    fn max_diff(a: &Array2<f64>, b: &PosteriorMatrix) -> f64 {
        a.iter().zip(b.values().iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn lookup_layers_reproduce_efb() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let obs = [1, 0, 2, 2, 1, 0];
        let rows = one_hot_rows(&obs, 3);

        let e = derive_entropic(&GenerativeHmmParams::random(ChainKind::Hmm, 3, 3, &mut rng)).unwrap();
        let layer = hnmc_from_entropic(&e).unwrap();
        let out = layer_output(|g, xs| layer.forward(g, xs).unwrap(), &rows);
        assert!(max_diff(&out, &efb(&e, &obs).unwrap()) < 1e-12);

        let e2 = derive_entropic(&GenerativeHmmParams::random(ChainKind::Hmm2, 3, 3, &mut rng)).unwrap();
        let layer2 = hnmc2_from_entropic(&e2).unwrap();
        let out2 = layer_output(|g, xs| layer2.forward(g, xs).unwrap(), &rows);
        assert!(max_diff(&out2, &efb2(&e2, &obs).unwrap()) < 1e-12);

        let ec = derive_entropic(&GenerativeHmmParams::random(ChainKind::HmmCn, 3, 3, &mut rng)).unwrap();
        let layer3 = hnmc_cn_from_entropic(&ec).unwrap();
        let out3 = layer_output(|g, xs| layer3.forward(g, xs).unwrap(), &rows);
        assert!(max_diff(&out3, &efb_cn(&ec, &obs).unwrap()) < 1e-12);
    }

    #[test]
    fn cn_with_unit_net_j_degenerates_to_hnmc() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let e = derive_entropic(&GenerativeHmmParams::random(ChainKind::Hmm, 3, 2, &mut rng)).unwrap();
        let hnmc = hnmc_from_entropic(&e).unwrap();
        let ratio = ratio_table(&e).unwrap();
        let a = e.a.clone();
        let cn = HnmcCnLayer {
            input_dim: 2,
            n_states: 3,
            net_i: Kernel::Lookup(LookupKernel::new(3, 3, move |obs| {
                let y = symbol(obs, 1);
                Array2::from_shape_fn((3, 3), |(j, i)| a[[j, i]] * ratio[[y, i]])
            })),
            net_j: Kernel::Lookup(LookupKernel::new(3, 3, |_| Array2::ones((3, 3)))),
            initial_state: e.pi.to_vec(),
        };
        let rows = one_hot_rows(&[0, 1, 1, 0, 1], 2);
        let a = layer_output(|g, xs| hnmc.forward(g, xs).unwrap(), &rows);
        let b = layer_output(|g, xs| cn.forward(g, xs).unwrap(), &rows);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn order2_layer_ignoring_first_index_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let e = derive_entropic(&GenerativeHmmParams::random(ChainKind::Hmm, 3, 2, &mut rng)).unwrap();
        let hnmc = hnmc_from_entropic(&e).unwrap();
        let ratio = ratio_table(&e).unwrap();
        let a = e.a.clone();
        let pi = e.pi.clone();
        let collapsed = Hnmc2Layer {
            input_dim: 2,
            n_states: 3,
            kernel: Kernel::Lookup(LookupKernel::new(9, 3, move |obs| {
                let y = symbol(obs, 0);
                Array2::from_shape_fn((9, 3), |(r, i)| a[[r % 3, i]] * ratio[[y, i]])
            })),
            initial_pair: (0..9).map(|r| pi[r % 3]).collect(),
        };
        for len in 1..=5 {
            let rows = one_hot_rows(&[1, 0, 0, 1, 1][..len], 2);
            let x = layer_output(|g, xs| hnmc.forward(g, xs).unwrap(), &rows);
            let y = layer_output(|g, xs| collapsed.forward(g, xs).unwrap(), &rows);
            assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-12), "T = {len}");
        }
    }
}

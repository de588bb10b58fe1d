use rand::Rng;

use super::{check_distribution, Activation, AffineKernel, Graph, Kernel, NnError, ParamStore, Result};
use crate::autodiff::Var;

fn check_inputs(g: &Graph<'_>, xs: &[Var], input_dim: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    for &x in xs {
        let got = g.tape.shape(x);
        if got != [input_dim] {
            return Err(NnError::InputWidth {
                expected: input_dim,
                got: got.iter().product(),
            });
        }
    }
    Ok(())
}

/// Runs the normalised forward/backward sweep over first-order transition
/// matrices `m[t]` (row = state at `t-1`, column = state at `t`) and returns
/// the per-position normalised products.
fn chain_sweep(g: &mut Graph<'_>, start: Var, m: &[Var]) -> Result<Vec<Var>> {
    let t_len = m.len();
    let mut alpha = Vec::with_capacity(t_len);
    let mut prev = start;
    for &k in m {
        let raw = g.tape.matmul(prev, k)?;
        prev = g.tape.normalize(raw)?;
        alpha.push(prev);
    }
    let n = g.tape.shape(start)[0];
    let mut beta = vec![g.tape.vector(&vec![1.0; n]); t_len];
    for t in (0..t_len - 1).rev() {
        let raw = g.tape.matmul(m[t + 1], beta[t + 1])?;
        beta[t] = g.tape.normalize(raw)?;
    }
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prod = g.tape.mul(alpha[t], beta[t])?;
        let p = g.tape.normalize(prod)?;
        check_distribution(g, p, t)?;
        out.push(p);
    }
    Ok(out)
}

/// Hidden neural Markov chain layer.
///
/// The kernel at position `t` is an `N x N` matrix `K_t(j, i)` computed
/// from `(y_t, one-hot(j))`. The forward table starts from the initial state
/// `s0` as `alpha_1 = s0 K_1` (so `s0 = pi` with `K = a L / pi` reproduces
/// `alpha_1 = L_{y_1}`), and `beta_T = 1`.
#[derive(Debug, Clone)]
pub struct HnmcLayer {
    pub input_dim: usize,
    pub n_states: usize,
    pub kernel: Kernel,
    pub initial_state: Vec<f64>,
}

impl HnmcLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        n_states: usize,
        kernel_hidden: &[usize],
        activation: Activation,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let kernel = AffineKernel::new(
            store,
            &format!("{prefix}.kernel"),
            &[input_dim],
            n_states,
            n_states,
            kernel_hidden,
            activation,
            group,
            rng,
        );
        HnmcLayer {
            input_dim,
            n_states,
            kernel: Kernel::Affine(kernel),
            initial_state: vec![1.0; n_states],
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        check_inputs(g, xs, self.input_dim)?;
        let kernels = xs
            .iter()
            .map(|&x| self.kernel.eval(g, &[Some(x)]))
            .collect::<Result<Vec<_>>>()?;
        let s0 = g.tape.vector(&self.initial_state);
        chain_sweep(g, s0, &kernels)
    }
}

/// Order-2 layer: the kernel maps `(y_t, one-hot(k, j))` to a row over `i`,
/// standing in for `a2_{k,j}(i) L_{y_t}(i) / pi(i)`.
///
/// Pair tables over `(x_{t-1}, x_t)` start from an initial pair state over
/// the virtual `(x_{-1}, x_0)`; with the stationary pair law as that state
/// and exact tables, the second table equals the closed-form base case
/// `L_{y_1}(j) a_j(i) L_{y_2}(i) / pi(i)`.
#[derive(Debug, Clone)]
pub struct Hnmc2Layer {
    pub input_dim: usize,
    pub n_states: usize,
    /// `n_states^2` conditioning rows indexed `k * N + j`.
    pub kernel: Kernel,
    /// Row-major `N x N` initial pair state.
    pub initial_pair: Vec<f64>,
}

impl Hnmc2Layer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        n_states: usize,
        kernel_hidden: &[usize],
        activation: Activation,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let kernel = AffineKernel::new(
            store,
            &format!("{prefix}.kernel"),
            &[input_dim],
            n_states * n_states,
            n_states,
            kernel_hidden,
            activation,
            group,
            rng,
        );
        Hnmc2Layer {
            input_dim,
            n_states,
            kernel: Kernel::Affine(kernel),
            initial_pair: vec![1.0; n_states * n_states],
        }
    }

    /// `new(j, i) = sum_k pair(k, j) kernel[(k, j), i]`, normalised.
    fn advance(&self, g: &mut Graph<'_>, pair: Var, kernel: Var) -> Result<Var> {
        let n = self.n_states;
        let flat = g.tape.reshape(pair, &[n * n])?;
        let weighted = g.tape.scale_rows(kernel, flat)?;
        let by_k = g.tape.reshape(weighted, &[n, n * n])?;
        let summed = g.tape.sum_axis(by_k, 0)?;
        let table = g.tape.reshape(summed, &[n, n])?;
        let s = g.tape.sum(table);
        Ok(g.tape.div(table, s)?)
    }

    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        check_inputs(g, xs, self.input_dim)?;
        let n = self.n_states;
        let t_len = xs.len();
        let kernels = xs
            .iter()
            .map(|&x| self.kernel.eval(g, &[Some(x)]))
            .collect::<Result<Vec<_>>>()?;
        let mut pair = g.tape.constant(vec![n, n], self.initial_pair.clone())?;
        let mut alpha = Vec::with_capacity(t_len);
        for &k in &kernels {
            pair = self.advance(g, pair, k)?;
            alpha.push(pair);
        }
        if t_len == 1 {
            let marg = g.tape.sum_axis(alpha[0], 0)?;
            let p = g.tape.normalize(marg)?;
            check_distribution(g, p, 0)?;
            return Ok(vec![p]);
        }

        let mut beta = vec![g.tape.constant(vec![n, n], vec![1.0; n * n])?; t_len];
        for t in (1..t_len - 1).rev() {
            // beta_t(j, i) = sum_k kernel_{t+1}[(j, i), k] beta_{t+1}(i, k)
            let cube = g.tape.reshape(kernels[t + 1], &[n, n, n])?;
            let prod = g.tape.mul(cube, beta[t + 1])?;
            let rows = g.tape.reshape(prod, &[n * n, n])?;
            let summed = g.tape.sum_axis(rows, 1)?;
            let table = g.tape.reshape(summed, &[n, n])?;
            let s = g.tape.sum(table);
            beta[t] = g.tape.div(table, s)?;
        }

        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            // position 0 marginalises the second index of the t = 1 tables
            let (src, axis) = if t == 0 { (1, 1) } else { (t, 0) };
            let prod = g.tape.mul(alpha[src], beta[src])?;
            let marg = g.tape.sum_axis(prod, axis)?;
            let p = g.tape.normalize(marg)?;
            check_distribution(g, p, t)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Complexified-noise layer built from two kernels.
///
/// `net_i` reads `(y_{t-1}, y_t, one-hot(j))` and gives a row over `i`
/// standing in for `I_{j,y_{t-1}}(i) L_{y_t}(i) / a_j(i)`; `net_j` reads
/// `(y_t, one-hot(i))` and gives a row over `j` standing in for
/// `J_{i,y_t}(j) / pi(j)`. Their product couples `x_{t-1} = j` to `x_t = i`.
/// At the first position the previous-token slot is empty.
#[derive(Debug, Clone)]
pub struct HnmcCnLayer {
    pub input_dim: usize,
    pub n_states: usize,
    pub net_i: Kernel,
    pub net_j: Kernel,
    pub initial_state: Vec<f64>,
}

impl HnmcCnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        n_states: usize,
        kernel_hidden: &[usize],
        activation: Activation,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let net_i = AffineKernel::new(
            store,
            &format!("{prefix}.net_i"),
            &[input_dim, input_dim],
            n_states,
            n_states,
            kernel_hidden,
            activation,
            group,
            rng,
        );
        let net_j = AffineKernel::new(
            store,
            &format!("{prefix}.net_j"),
            &[input_dim],
            n_states,
            n_states,
            kernel_hidden,
            activation,
            group,
            rng,
        );
        HnmcCnLayer {
            input_dim,
            n_states,
            net_i: Kernel::Affine(net_i),
            net_j: Kernel::Affine(net_j),
            initial_state: vec![1.0; n_states],
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        check_inputs(g, xs, self.input_dim)?;
        let mut kernels = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let prev = t.checked_sub(1).map(|s| xs[s]);
            let ki = self.net_i.eval(g, &[prev, Some(xs[t])])?;
            let kj = self.net_j.eval(g, &[Some(xs[t])])?;
            let kj_t = g.tape.transpose(kj)?;
            kernels.push(g.tape.mul(ki, kj_t)?);
        }
        let s0 = g.tape.vector(&self.initial_state);
        chain_sweep(g, s0, &kernels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LookupKernel;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inputs(g: &mut Graph<'_>, rows: &[Vec<f64>]) -> Vec<Var> {
        rows.iter().map(|r| g.tape.vector(r)).collect()
    }

    fn random_rows(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn constant_kernel_gives_normalised_constant() {
        let c = [0.5, 2.0, 1.5];
        let store = ParamStore::new();
        let layer = HnmcLayer {
            input_dim: 2,
            n_states: 3,
            kernel: Kernel::Lookup(LookupKernel::new(3, 3, move |_| {
                Array2::from_shape_fn((3, 3), |(_, i)| c[i])
            })),
            initial_state: vec![1.0; 3],
        };
        let mut g = Graph::new(&store);
        let xs = inputs(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = layer.forward(&mut g, &xs).unwrap();
        for p in out {
            let v = g.tape.value(p);
            for i in 0..3 {
                assert!((v[i] - c[i] / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn outputs_are_positive_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let l1 = HnmcLayer::new(&mut store, "a", 4, 3, &[], Activation::Melu, 0, &mut rng);
        let l2 = Hnmc2Layer::new(&mut store, "b", 4, 3, &[5], Activation::Exp, 0, &mut rng);
        let l3 = HnmcCnLayer::new(&mut store, "c", 4, 3, &[], Activation::Sigmoid, 0, &mut rng);
        let rows = random_rows(&mut rng, 6, 4);
        for t in 1..=6 {
            let mut g = Graph::new(&store);
            let xs = inputs(&mut g, &rows[..t]);
            for out in [
                l1.forward(&mut g, &xs).unwrap(),
                l2.forward(&mut g, &xs).unwrap(),
                l3.forward(&mut g, &xs).unwrap(),
            ] {
                assert_eq!(out.len(), t);
                for p in out {
                    let v = g.tape.value(p);
                    assert!(v.iter().all(|&x| x > 0.0));
                    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn hnmc_looks_ahead_but_rnn_style_prefixes_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let layer = HnmcLayer::new(&mut store, "h", 3, 3, &[], Activation::Melu, 0, &mut rng);
        let mut rows = random_rows(&mut rng, 5, 3);
        let first = {
            let mut g = Graph::new(&store);
            let xs = inputs(&mut g, &rows);
            let out = layer.forward(&mut g, &xs).unwrap();
            g.tape.value(out[1]).to_vec()
        };
        rows[4] = vec![2.0, -2.0, 1.0];
        let mut g = Graph::new(&store);
        let xs = inputs(&mut g, &rows);
        let out = layer.forward(&mut g, &xs).unwrap();
        let second = g.tape.value(out[1]);
        assert!(first.iter().zip(second).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = HnmcLayer::new(&mut store, "h", 3, 2, &[], Activation::Melu, 0, &mut rng);
        let mut g = Graph::new(&store);
        let xs = inputs(&mut g, &[vec![1.0, 0.0]]);
        assert_eq!(
            layer.forward(&mut g, &xs).unwrap_err(),
            NnError::InputWidth { expected: 3, got: 2 }
        );
        assert_eq!(layer.forward(&mut g, &[]).unwrap_err(), NnError::EmptySequence);
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NnError, ParamId, ParamStore, Result};
use crate::autodiff::Var;

/// Elman cell `h_t = tanh(W_in y_t + W_h h_{t-1} + b)` with `h_0 = 0`.
#[derive(Debug, Clone)]
pub struct RnnLayer {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_in: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl RnnLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        group: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_dim + hidden;
        RnnLayer {
            input_dim,
            hidden,
            w_in: store.add_uniform(format!("{prefix}.w_in"), &[hidden, input_dim], fan_in, group, rng),
            w_h: store.add_uniform(format!("{prefix}.w_h"), &[hidden, hidden], fan_in, group, rng),
            bias: store.add_uniform(format!("{prefix}.b"), &[hidden], fan_in, group, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        if xs.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let (w_in, w_h, b) = (g.param(self.w_in), g.param(self.w_h), g.param(self.bias));
        let mut h = g.tape.vector(&vec![0.0; self.hidden]);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            if g.tape.shape(x) != [self.input_dim] {
                return Err(NnError::InputWidth {
                    expected: self.input_dim,
                    got: g.tape.shape(x).iter().product(),
                });
            }
            let a = g.tape.matmul(w_in, x)?;
            let r = g.tape.matmul(w_h, h)?;
            let s = g.tape.add(a, r)?;
            let s = g.tape.add(s, b)?;
            h = g.tape.tanh(s);
            out.push(h);
        }
        Ok(out)
    }
}

/// How the two directions of a [`BiRnnLayer`] are combined per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    Concat,
    Sum,
}

/// Left-to-right and right-to-left RNNs over the same inputs.
#[derive(Debug, Clone)]
pub struct BiRnnLayer {
    pub forward_rnn: RnnLayer,
    pub backward_rnn: RnnLayer,
    pub merge: Merge,
}

impl BiRnnLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        merge: Merge,
        group: usize,
        rng: &mut R,
    ) -> Self {
        BiRnnLayer {
            forward_rnn: RnnLayer::new(store, &format!("{prefix}.fwd"), input_dim, hidden, group, rng),
            backward_rnn: RnnLayer::new(store, &format!("{prefix}.bwd"), input_dim, hidden, group, rng),
            merge,
        }
    }

    pub fn output_width(&self) -> usize {
        match self.merge {
            Merge::Concat => 2 * self.forward_rnn.hidden,
            Merge::Sum => self.forward_rnn.hidden,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        let fwd = self.forward_rnn.forward(g, xs)?;
        let reversed: Vec<Var> = xs.iter().rev().copied().collect();
        let mut bwd = self.backward_rnn.forward(g, &reversed)?;
        bwd.reverse();
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| match self.merge {
                Merge::Concat => Ok(g.tape.concat(&[f, b])?),
                Merge::Sum => Ok(g.tape.add(f, b)?),
            })
            .collect()
    }
}

/// Affine map `W x + b` applied position-wise.
#[derive(Debug, Clone)]
pub struct Dense {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        group: usize,
        rng: &mut R,
    ) -> Self {
        Dense {
            input_dim,
            output_dim,
            weight: store.add_uniform(format!("{prefix}.w"), &[output_dim, input_dim], input_dim, group, rng),
            bias: store.add_uniform(format!("{prefix}.b"), &[output_dim], input_dim, group, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, xs: &[Var]) -> Result<Vec<Var>> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        xs.iter()
            .map(|&x| {
                let wx = g.tape.matmul(w, x)?;
                Ok(g.tape.add(wx, b)?)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(layer: &dyn Fn(&mut Graph<'_>, &[Var]) -> Vec<Var>, store: &ParamStore, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut g = Graph::new(store);
        let xs: Vec<Var> = rows.iter().map(|r| g.tape.vector(r)).collect();
        let out = layer(&mut g, &xs);
        out.iter().map(|&v| g.tape.value(v).to_vec()).collect()
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let rnn = RnnLayer::new(&mut store, "r", 3, 4, 0, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let out = run(&|g, xs| rnn.forward(g, xs).unwrap(), &store, &[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]);
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rnn_is_causal_and_birnn_is_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let rnn = RnnLayer::new(&mut store, "r", 2, 3, 0, &mut rng);
        let bi = BiRnnLayer::new(&mut store, "b", 2, 3, Merge::Concat, 0, &mut rng);
        let rows = vec![vec![0.1, 0.2], vec![0.3, -0.4], vec![0.5, 0.6]];
        let mut changed = rows.clone();
        changed[2] = vec![-1.0, 1.0];
        let a = run(&|g, xs| rnn.forward(g, xs).unwrap(), &store, &rows);
        let b = run(&|g, xs| rnn.forward(g, xs).unwrap(), &store, &changed);
        assert_eq!(a[..2], b[..2]);
        let mut first_changed = rows.clone();
        first_changed[0] = vec![1.0, -1.0];
        let c = run(&|g, xs| bi.forward(g, xs).unwrap(), &store, &rows);
        let d = run(&|g, xs| bi.forward(g, xs).unwrap(), &store, &first_changed);
        assert_eq!(c[2].len(), 6);
        assert_ne!(c[2], d[2]);
    }
}

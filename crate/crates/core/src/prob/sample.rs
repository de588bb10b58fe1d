use ndarray::ArrayView1;
use rand::Rng;

use super::{ChainKind, GenerativeHmmParams, InferenceError, Result};

/// Draws an index from a probability vector by inverting its cumulative sum.
pub(crate) fn categorical<R: Rng + ?Sized>(probs: ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl GenerativeHmmParams {
    /// Samples a `(hidden, observed)` path of length `len` from the law of `kind`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        kind: ChainKind,
        len: usize,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        if len == 0 {
            return Err(InferenceError::EmptySequence);
        }
        self.validate(kind)?;
        let mut x = Vec::with_capacity(len);
        let mut y = Vec::with_capacity(len);
        x.push(categorical(self.pi.view(), rng));
        y.push(categorical(self.b.row(x[0]), rng));
        for t in 1..len {
            let (prev, prev_y) = (x[t - 1], y[t - 1]);
            let (xt, yt) = match kind {
                ChainKind::Hmm => {
                    let xt = categorical(self.a.row(prev), rng);
                    (xt, categorical(self.b.row(xt), rng))
                }
                ChainKind::Hmm2 => {
                    let xt = if t == 1 {
                        categorical(self.a.row(prev), rng)
                    } else {
                        let a2 = self.order2.as_ref().expect("validated");
                        categorical(a2.slice(ndarray::s![x[t - 2], prev, ..]), rng)
                    };
                    (xt, categorical(self.b.row(xt), rng))
                }
                ChainKind::HmmCn => {
                    let cn = self.cn.as_ref().expect("validated");
                    let xt = categorical(cn.transition.slice(ndarray::s![prev, prev_y, ..]), rng);
                    (xt, categorical(cn.pair_emission.slice(ndarray::s![prev, xt, ..]), rng))
                }
            };
            x.push(xt);
            y.push(yt);
        }
        Ok((x, y))
    }
}

use super::{melu, sigmoid, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// The left operand is repeated along the right operand's leading axis.
    Lhs,
    /// The right operand is repeated along the left operand's leading axis.
    Rhs,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Neg(Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Melu(Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Select(Var, usize),
    ScaleRows(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    /// Some trainable leaf is an ancestor (or this node is one).
    tracks: bool,
    trainable: bool,
}

/// Record of executed operations for one forward pass.
///
/// Nodes are appended in execution order, so the record is a topological
/// order by construction. Gradients of trainable leaves accumulate across
/// repeated [`Tape::backward`] calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    accum: Vec<Option<Vec<f64>>>,
    visits: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn reduce_leading(full: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, v) in full.iter().enumerate() {
        out[i % n] += v;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes processed by the most recent backward call.
    pub fn last_backward_visits(&self) -> usize {
        self.visits
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, tracks: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            tracks,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracks)
    }

    /// Records a tensor as a leaf; it is trainable iff the tensor requires grad.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let trainable = tensor.requires_grad();
        let v = self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            trainable,
        );
        self.nodes[v.0].trainable = trainable;
        v
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn vector(&mut self, data: &[f64]) -> Var {
        self.push(vec![data.len()], data.to_vec(), Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Vec::new(), vec![value], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).data[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape matches data")
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.accum.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in self.accum.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    // ----- elementwise -------------------------------------------------

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Broadcast, Vec<usize>)> {
        let sa = &self.node(a).shape;
        let sb = &self.node(b).shape;
        if sa == sb {
            Ok((Broadcast::Same, sa.clone()))
        } else if (!sa.is_empty() && sa[1..] == sb[..]) || sb.is_empty() {
            Ok((Broadcast::Rhs, sa.clone()))
        } else if (!sb.is_empty() && sb[1..] == sa[..]) || sa.is_empty() {
            Ok((Broadcast::Lhs, sb.clone()))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let (bc, shape) = self.broadcast(name, a, b)?;
        let da = &self.node(a).data;
        let db = &self.node(b).data;
        let data: Vec<f64> = match bc {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Rhs => da
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i % db.len()]))
                .collect(),
            Broadcast::Lhs => db
                .iter()
                .enumerate()
                .map(|(i, &y)| f(da[i % da.len()], y))
                .collect(),
        };
        let tracks = self.tracks(&[a, b]);
        Ok(self.push(shape, data, make(a, b, bc), tracks))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.node(b).data.contains(&0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "zero denominator".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let n = self.node(a);
        let data = n.data.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        let tracks = n.tracks;
        self.push(shape, data, op, tracks)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.node(a).data.iter().find(|&&v| !(v > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn melu(&mut self, a: Var) -> Var {
        self.unary(a, melu, Op::Melu(a))
    }

    // ----- linear algebra and reshaping --------------------------------

    /// Matrix product. A rank-1 left operand is treated as a row vector and a
    /// rank-1 right operand as a column vector; the corresponding axis is
    /// dropped from the result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.node(a).shape.clone();
        let sb = self.node(b).shape.clone();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (m, k, a_vec) = match sa.len() {
            1 => (1, sa[0], true),
            2 => (sa[0], sa[1], false),
            _ => return Err(mismatch()),
        };
        let (k2, n, b_vec) = match sb.len() {
            1 => (sb[0], 1, true),
            2 => (sb[0], sb[1], false),
            _ => return Err(mismatch()),
        };
        if k != k2 {
            return Err(mismatch());
        }
        let da = &self.node(a).data;
        let db = &self.node(b).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = da[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &db[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &y) in dst.iter_mut().zip(row) {
                    *d += x * y;
                }
            }
        }
        let shape = match (a_vec, b_vec) {
            (true, true) => Vec::new(),
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let tracks = self.tracks(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul { a, b, m, k, n }, tracks))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        if n.shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                lhs: n.shape.clone(),
                rhs: Vec::new(),
            });
        }
        let (r, c) = (n.shape[0], n.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = n.data[i * c + j];
            }
        }
        let tracks = n.tracks;
        Ok(self.push(vec![c, r], data, Op::Transpose(a), tracks))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(a);
        if numel(shape) != n.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: n.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = n.data.clone();
        let tracks = n.tracks;
        Ok(self.push(shape.to_vec(), data, Op::Reshape(a), tracks))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.data.iter().sum();
        let tracks = n.tracks;
        self.push(Vec::new(), vec![s], Op::Sum(a), tracks)
    }

    /// Sums a matrix over `axis` (0 = down the columns, 1 = along the rows).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = self.node(a);
        if n.shape.len() != 2 || axis > 1 {
            return Err(TensorError::ShapeMismatch {
                op: "sum_axis",
                lhs: n.shape.clone(),
                rhs: vec![axis],
            });
        }
        let (r, c) = (n.shape[0], n.shape[1]);
        let data = if axis == 0 {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += n.data[i * c + j];
                }
            }
            out
        } else {
            n.data.chunks(c).map(|row| row.iter().sum()).collect()
        };
        let shape = vec![if axis == 0 { c } else { r }];
        let tracks = n.tracks;
        Ok(self.push(shape, data, Op::SumAxis(a, axis), tracks))
    }

    /// Concatenates along the leading axis; trailing shapes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Domain {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let tail = self.node(*first).shape.get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let n = self.node(p);
            if n.shape.is_empty() || n.shape[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.node(*first).shape.clone(),
                    rhs: n.shape.clone(),
                });
            }
            lead += n.shape[0];
            data.extend_from_slice(&n.data);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let tracks = self.tracks(parts);
        Ok(self.push(shape, data, Op::Concat(parts.to_vec()), tracks))
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Domain {
            op: "stack",
            detail: "no inputs".into(),
        })?;
        let inner = self.node(*first).shape.clone();
        let mut data = Vec::with_capacity(numel(&inner) * parts.len());
        for &p in parts {
            let n = self.node(p);
            if n.shape != inner {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: inner,
                    rhs: n.shape.clone(),
                });
            }
            data.extend_from_slice(&n.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let tracks = self.tracks(parts);
        Ok(self.push(shape, data, Op::Stack(parts.to_vec()), tracks))
    }

    /// Selects index `i` along the leading axis.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.node(a);
        if n.shape.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "select",
                lhs: Vec::new(),
                rhs: vec![i],
            });
        }
        if i >= n.shape[0] {
            return Err(TensorError::IndexOutOfRange {
                index: i,
                len: n.shape[0],
            });
        }
        let shape = n.shape[1..].to_vec();
        let w = numel(&shape);
        let data = n.data[i * w..(i + 1) * w].to_vec();
        let tracks = n.tracks;
        Ok(self.push(shape, data, Op::Select(a, i), tracks))
    }

    /// Multiplies row `i` of a matrix by `v[i]`.
    pub fn scale_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (&self.node(m).shape, &self.node(v).shape);
        if sm.len() != 2 || sv.len() != 1 || sm[0] != sv[0] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: sm.clone(),
                rhs: sv.clone(),
            });
        }
        let c = sm[1];
        let shape = sm.clone();
        let dv = &self.node(v).data;
        let data = self
            .node(m)
            .data
            .iter()
            .enumerate()
            .map(|(idx, &x)| x * dv[idx / c])
            .collect();
        let tracks = self.tracks(&[m, v]);
        Ok(self.push(shape, data, Op::ScaleRows(m, v), tracks))
    }

    // ----- probability heads -------------------------------------------

    fn last_axis(&self, a: Var, op: &'static str) -> Result<usize> {
        match self.node(a).shape.last() {
            Some(&w) if w > 0 => Ok(w),
            _ => Err(TensorError::ShapeMismatch {
                op,
                lhs: self.node(a).shape.clone(),
                rhs: Vec::new(),
            }),
        }
    }

    /// Softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let w = self.last_axis(a, "softmax")?;
        let n = self.node(a);
        let mut data = Vec::with_capacity(n.data.len());
        for row in n.data.chunks(w) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            data.extend(e.into_iter().map(|x| x / z));
        }
        let (shape, tracks) = (n.shape.clone(), n.tracks);
        Ok(self.push(shape, data, Op::Softmax(a), tracks))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let w = self.last_axis(a, "log_softmax")?;
        let n = self.node(a);
        let mut data = Vec::with_capacity(n.data.len());
        for row in n.data.chunks(w) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lz = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lz));
        }
        let (shape, tracks) = (n.shape.clone(), n.tracks);
        Ok(self.push(shape, data, Op::LogSoftmax(a), tracks))
    }

    /// `-log_softmax(logits)[target]` for a vector of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        if self.node(logits).shape.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.node(logits).shape.clone(),
                rhs: Vec::new(),
            });
        }
        let ls = self.log_softmax(logits)?;
        let picked = self.select(ls, target)?;
        Ok(self.neg(picked))
    }

    /// `v / sum(v)`.
    pub fn normalize(&mut self, v: Var) -> Result<Var> {
        let s = self.sum(v);
        self.div(v, s)
    }

    // ----- reverse pass ------------------------------------------------

    /// Propagates d`loss` back to every trainable leaf, adding into their
    /// accumulated gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(TensorError::NotScalar(self.node(loss).shape.clone()));
        }
        let nodes = &self.nodes;
        if self.accum.len() < nodes.len() {
            self.accum.resize(nodes.len(), None);
        }
        let accum = &mut self.accum;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut visits = 0;

        fn send(grads: &mut [Option<Vec<f64>>], nodes: &[Node], to: Var, g: Vec<f64>) {
            if !nodes[to.0].tracks {
                return;
            }
            match &mut grads[to.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }

        fn split(bc: Broadcast, ga: Vec<f64>, gb: Vec<f64>, na: usize, nb: usize) -> (Vec<f64>, Vec<f64>) {
            match bc {
                Broadcast::Same => (ga, gb),
                Broadcast::Rhs => (ga, reduce_leading(&gb, nb)),
                Broadcast::Lhs => (reduce_leading(&ga, na), gb),
            }
        }

        fn expand(data: &[f64], len: usize) -> impl Iterator<Item = f64> + '_ {
            (0..len).map(move |i| data[i % data.len()])
        }

        for i in (0..=loss.0).rev() {
            visits += 1;
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.tracks {
                continue;
            }
            let y = &node.data;
            match &node.op {
                Op::Leaf => {
                    if node.trainable {
                        match &mut accum[i] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            slot => *slot = Some(g),
                        }
                    }
                }
                &Op::Add(a, b, bc) | &Op::Sub(a, b, bc) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let gb: Vec<f64> = g.iter().map(|v| sign * v).collect();
                    let (na, nb) = (nodes[a.0].data.len(), nodes[b.0].data.len());
                    let (ga, gb) = split(bc, g, gb, na, nb);
                    send(&mut grads, nodes, a, ga);
                    send(&mut grads, nodes, b, gb);
                }
                &Op::Mul(a, b, bc) => {
                    let (da, db) = (&nodes[a.0].data, &nodes[b.0].data);
                    let n = g.len();
                    let ga = g.iter().zip(expand(db, n)).map(|(g, y)| g * y).collect();
                    let gb = g.iter().zip(expand(da, n)).map(|(g, x)| g * x).collect();
                    let (ga, gb) = split(bc, ga, gb, da.len(), db.len());
                    send(&mut grads, nodes, a, ga);
                    send(&mut grads, nodes, b, gb);
                }
                &Op::Div(a, b, bc) => {
                    let (da, db) = (&nodes[a.0].data, &nodes[b.0].data);
                    let n = g.len();
                    let ga = g.iter().zip(expand(db, n)).map(|(g, y)| g / y).collect();
                    let gb = g
                        .iter()
                        .zip(expand(da, n).zip(expand(db, n)))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    let (ga, gb) = split(bc, ga, gb, da.len(), db.len());
                    send(&mut grads, nodes, a, ga);
                    send(&mut grads, nodes, b, gb);
                }
                &Op::Neg(a) => send(&mut grads, nodes, a, g.iter().map(|v| -v).collect()),
                &Op::Scale(a, c) => send(&mut grads, nodes, a, g.iter().map(|v| c * v).collect()),
                &Op::Exp(a) => send(&mut grads, nodes, a, g.iter().zip(y).map(|(g, y)| g * y).collect()),
                &Op::Log(a) => {
                    let x = &nodes[a.0].data;
                    send(&mut grads, nodes, a, g.iter().zip(x).map(|(g, x)| g / x).collect())
                }
                &Op::Sigmoid(a) => send(
                    &mut grads,
                    nodes,
                    a,
                    g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                ),
                &Op::Tanh(a) => send(
                    &mut grads,
                    nodes,
                    a,
                    g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                ),
                &Op::Melu(a) => {
                    let x = &nodes[a.0].data;
                    let ga = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&x, &y))| if x > 0.0 { *g } else { g * y })
                        .collect();
                    send(&mut grads, nodes, a, ga)
                }
                &Op::MatMul { a, b, m, k, n } => {
                    let (da, db) = (&nodes[a.0].data, &nodes[b.0].data);
                    if nodes[a.0].tracks {
                        let mut ga = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * db[p * n + j];
                                }
                                ga[i * k + p] = s;
                            }
                        }
                        send(&mut grads, nodes, a, ga);
                    }
                    if nodes[b.0].tracks {
                        let mut gb = vec![0.0; k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let x = da[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    gb[p * n + j] += x * g[i * n + j];
                                }
                            }
                        }
                        send(&mut grads, nodes, b, gb);
                    }
                }
                &Op::Transpose(a) => {
                    // node shape is [c, r]; input was [r, c]
                    let (c, r) = (node.shape[0], node.shape[1]);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    send(&mut grads, nodes, a, ga);
                }
                &Op::Reshape(a) => send(&mut grads, nodes, a, g),
                &Op::Sum(a) => {
                    let len = nodes[a.0].data.len();
                    send(&mut grads, nodes, a, vec![g[0]; len]);
                }
                &Op::SumAxis(a, axis) => {
                    let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = if axis == 0 { g[j] } else { g[i] };
                        }
                    }
                    send(&mut grads, nodes, a, ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p.0].data.len();
                        send(&mut grads, nodes, p, g[off..off + len].to_vec());
                        off += len;
                    }
                }
                Op::Stack(parts) => {
                    let w = g.len() / parts.len();
                    for (idx, &p) in parts.iter().enumerate() {
                        send(&mut grads, nodes, p, g[idx * w..(idx + 1) * w].to_vec());
                    }
                }
                &Op::Select(a, idx) => {
                    let mut ga = vec![0.0; nodes[a.0].data.len()];
                    let w = g.len();
                    ga[idx * w..(idx + 1) * w].copy_from_slice(&g);
                    send(&mut grads, nodes, a, ga);
                }
                &Op::ScaleRows(m, v) => {
                    let (dm, dv) = (&nodes[m.0].data, &nodes[v.0].data);
                    let c = nodes[m.0].shape[1];
                    let gm = g.iter().enumerate().map(|(idx, g)| g * dv[idx / c]).collect();
                    let mut gv = vec![0.0; dv.len()];
                    for (idx, (g, x)) in g.iter().zip(dm).enumerate() {
                        gv[idx / c] += g * x;
                    }
                    send(&mut grads, nodes, m, gm);
                    send(&mut grads, nodes, v, gv);
                }
                &Op::Softmax(a) => {
                    let w = *node.shape.last().unwrap();
                    let mut ga = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(w).zip(y.chunks(w)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        ga.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                    }
                    send(&mut grads, nodes, a, ga);
                }
                &Op::LogSoftmax(a) => {
                    let w = *node.shape.last().unwrap();
                    let mut ga = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(w).zip(y.chunks(w)) {
                        let total: f64 = gr.iter().sum();
                        ga.extend(gr.iter().zip(yr).map(|(g, ly)| g - ly.exp() * total));
                    }
                    send(&mut grads, nodes, a, ga);
                }
            }
        }
        self.visits = visits;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn param(t: &mut Tape, data: &[f64]) -> Var {
        t.leaf(&Tensor::vector(data.to_vec()).with_grad())
    }

    #[test]
    fn melu_values() {
        let mut t = Tape::new();
        let x = t.vector(&[0.0, 2.0, -1.0]);
        let y = t.melu(x);
        let v = t.value(y);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 3.0);
        assert_abs_diff_eq!(v[2], 0.36787944117144233, epsilon = 1e-15);
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let a = t.vector(&[1.0, 2.0]);
        let b = t.vector(&[3.0, 4.0]);
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s), &[4.0, 6.0]);
        let z = t.vector(&[0.0, 0.0]);
        let e = t.exp(z);
        assert_eq!(t.value(e), &[1.0, 1.0]);
        let one = t.vector(&[1.0]);
        let zero = t.vector(&[0.0]);
        assert!(matches!(t.div(one, zero), Err(TensorError::Domain { .. })));
        assert!(matches!(t.log(zero), Err(TensorError::Domain { .. })));
        let c = t.vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(t.add(a, c), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn leading_axis_broadcast() {
        let mut t = Tape::new();
        let m = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = t.vector(&[10.0, 20.0]);
        let s = t.add(m, v).unwrap();
        assert_eq!(t.value(s), &[11.0, 22.0, 13.0, 24.0]);
        let k = t.scalar(2.0);
        let q = t.div(v, k).unwrap();
        assert_eq!(t.value(q), &[5.0, 10.0]);
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let id = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = t.matmul(id, m).unwrap();
        assert_eq!(t.value(p), &[1.0, 2.0, 3.0, 4.0]);
        let r = t.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let c = t.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let p = t.matmul(r, c).unwrap();
        assert_eq!(t.value(p), &[11.0]);
        assert!(t.matmul(c, c).is_err());
    }

    #[test]
    fn matmul_gradient_matches_hand_value() {
        let mut t = Tape::new();
        let a = t.leaf(&Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap().with_grad());
        let b = t.constant(vec![2, 1], vec![2.0, 5.0]).unwrap();
        let p = t.matmul(a, b).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap(), &[2.0, 5.0]);
    }

    #[test]
    fn softmax_and_cross_entropy() {
        let mut t = Tape::new();
        let z = t.vector(&[0.0, 0.0]);
        let s = t.softmax(z).unwrap();
        assert_eq!(t.value(s), &[0.5, 0.5]);
        let ce = t.cross_entropy(z, 0).unwrap();
        assert_abs_diff_eq!(t.scalar_value(ce), std::f64::consts::LN_2, epsilon = 1e-15);
        let l = t.vector(&[10.0, -10.0]);
        let ce = t.cross_entropy(l, 1).unwrap();
        // 20 + ln(1 + e^-20)
        assert_abs_diff_eq!(t.scalar_value(ce), 20.000000002061153, epsilon = 1e-12);
        assert!(matches!(
            t.cross_entropy(l, 2),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = param(&mut t, &[3.0]);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn melu_sum_gradient() {
        let mut t = Tape::new();
        let x = param(&mut t, &[-1.0, 2.0]);
        let y = t.melu(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        let g = t.grad(x).unwrap();
        assert_abs_diff_eq!(g[0], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let x = param(&mut t, &[3.0]);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[12.0]);
        t.zero_grad();
        assert_eq!(t.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = param(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn backward_visits_each_node_once() {
        let mut t = Tape::new();
        let x = param(&mut t, &[0.3, -0.2]);
        let mut v = x;
        for _ in 0..10 {
            v = t.tanh(v);
            v = t.add(v, x).unwrap();
        }
        let s = t.sum(v);
        t.backward(s).unwrap();
        assert_eq!(t.last_backward_visits(), t.len());
    }

    #[test]
    fn repeated_inputs_in_concat_accumulate() {
        let mut t = Tape::new();
        let x = param(&mut t, &[1.0, 2.0]);
        let c = t.concat(&[x, x, x]).unwrap();
        let s = t.sum(c);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0, 3.0]);
    }
}

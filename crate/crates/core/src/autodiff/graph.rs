//! Tape-based reverse-mode graph.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` simply walks it in reverse.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use super::{AutodiffError, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    MaxReduce { x: Var, axis: usize, argmax: Vec<usize> },
    MeanReduce { x: Var, axis: usize },
    SumReduce { x: Var, axis: usize },
    SumAll(Var),
    Gather { x: Var, index: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Batch statistics observed by a training-mode batch norm, keyed by the
/// caller-supplied slot (the running-statistics buffer it should update).
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub slot: usize,
    pub mean: Vec<T>,
    /// Unbiased variance (n / (n - 1) correction; equals the biased value when n = 1).
    pub var: Vec<T>,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    params: HashMap<usize, Var>,
    bn_stats: Vec<BatchStats<T>>,
}

/// Split a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

impl<T: Real> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph { nodes: Vec::new(), mode, params: HashMap::new(), bn_stats: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that accumulates gradient on `backward`.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bring parameter `id` of `store` into the graph (once per graph).
    pub fn param(&mut self, store: &ParamStore<T>, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Gradients of every parameter pulled in with [`Graph::param`], indexed
    /// by parameter id; `None` for parameters the graph never touched.
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Vec<T>>> {
        let mut out = vec![None; n_params];
        for (&id, &v) in &self.params {
            if id < n_params {
                out[id] = self.nodes[v.0].grad.clone();
            }
        }
        out
    }

    pub fn batch_stats(&self) -> &[BatchStats<T>] {
        &self.bn_stats
    }

    fn check_finite(&self, op: &'static str, v: Var) -> Result<()> {
        if self.value(v).data().iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(AutodiffError::NonFiniteInput { op })
        }
    }

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<()> {
        let rank = self.shape(v).len();
        if axis >= rank {
            return Err(AutodiffError::AxisOutOfRange { op, axis, rank });
        }
        Ok(())
    }

    // ---------------------------------------------------------------- ops

    /// `[..., K] x [K, M] -> [..., M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.last() != Some(&sb[0]) {
            return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (k, m) = (sb[0], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let rows = av.len() / k;
        let mut out = vec![T::zero(); rows * m];
        for (arow, orow) in av.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
            for (&x, brow) in arow.iter().zip(bv.chunks_exact(m)) {
                if x == T::zero() {
                    continue;
                }
                for (o, &w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::raw(shape, out), Op::MatMul(a, b), rg))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(op, format!("{:?} with {:?}", sa, sb)));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.broadcast_check(op, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len();
        let data = av.data().chunks_exact(nb).flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| f(x, y))).collect();
        Ok(Tensor::raw(av.shape().to_vec(), data))
    }

    /// Elementwise sum; `b` broadcasts over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a);
        let t = Tensor::raw(v.shape().to_vec(), v.data().iter().map(|&x| x * c).collect());
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::raw(
            v.shape().to_vec(),
            v.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
        );
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        self.check_finite("softmax", x)?;
        let v = self.value(x);
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(src[at(j)]);
                }
                let mut s = T::zero();
                for j in 0..len {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / s;
                }
            }
        }
        let t = Tensor::raw(v.shape().to_vec(), out);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Maximum along `axis` (axis removed). Ties keep the lowest index, and the
    /// backward pass routes gradient to that element only.
    pub fn max_reduce(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_reduce", x, axis)?;
        let v = self.value(x);
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * len * inner;
            for i in 0..inner {
                let mut best = src[base + i];
                let mut arg = 0;
                for j in 1..len {
                    let c = src[base + j * inner + i];
                    if c > best {
                        best = c;
                        arg = j;
                    }
                }
                out.push(best);
                argmax.push(arg);
            }
        }
        let shape = Self::reduced_shape(v.shape(), axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::raw(shape, out), Op::MaxReduce { x, axis, argmax }, rg))
    }

    fn sum_along(&self, x: Var, axis: usize) -> Vec<T> {
        let v = self.value(x);
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += s;
                }
            }
        }
        out
    }

    pub fn mean_reduce(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_reduce", x, axis)?;
        let len = T::of(self.shape(x)[axis] as f64);
        let out = self.sum_along(x, axis).into_iter().map(|s| s / len).collect();
        let shape = Self::reduced_shape(self.shape(x), axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::raw(shape, out), Op::MeanReduce { x, axis }, rg))
    }

    pub fn sum_reduce(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_reduce", x, axis)?;
        let out = self.sum_along(x, axis);
        let shape = Self::reduced_shape(self.shape(x), axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::raw(shape, out), Op::SumReduce { x, axis }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Select rows (first axis) by index; indices may repeat.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let n = v.shape()[0];
        let row = v.numel() / n;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: n });
        }
        if index.is_empty() {
            return Err(shape_err("gather", "empty index".into()));
        }
        let src = v.data();
        let mut out = Vec::with_capacity(index.len() * row);
        for &i in index {
            out.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = index.len();
        let rg = self.rg(x);
        Ok(self.push(Tensor::raw(shape, out), Op::Gather { x, index: index.to_vec() }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let same = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {}", s, base, axis)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::raw(shape, out), Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", v.shape(), shape)));
        }
        let t = Tensor::raw(shape.to_vec(), v.data().to_vec());
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Per-feature normalization over every row of `x` (last axis = features).
    ///
    /// In training mode the batch statistics are used and reported through
    /// [`Graph::batch_stats`] under `slot`; in eval mode `running` supplies a
    /// frozen mean and variance, making the op a fixed affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        slot: usize,
        running: (&[T], &[T]),
    ) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c || running.0.len() != c || running.1.len() != c {
            return Err(shape_err("batch_norm", format!("{} features vs gamma {:?}", c, self.shape(gamma))));
        }
        let v = self.value(x);
        let rows = v.rows();
        let src = v.data();
        let eps = T::of(BN_EPS);
        let (mean, var, batch_stats) = match self.mode {
            Mode::Train => {
                let n = T::of(rows as f64);
                let mut mean = vec![T::zero(); c];
                for r in src.chunks_exact(c) {
                    for (m, &x) in mean.iter_mut().zip(r) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / n);
                let mut var = vec![T::zero(); c];
                for r in src.chunks_exact(c) {
                    for ((s, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
                        *s += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / n);
                (mean, var, true)
            }
            Mode::Eval => (running.0.to_vec(), running.1.to_vec(), false),
        };
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(src.len());
        for r in src.chunks_exact(c) {
            for j in 0..c {
                let h = (r[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let shape = v.shape().to_vec();
        if batch_stats {
            let corr = if rows > 1 { T::of(rows as f64 / (rows as f64 - 1.0)) } else { T::one() };
            self.bn_stats.push(BatchStats { slot, mean, var: var.iter().map(|&s| s * corr).collect() });
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against `B` labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_finite("cross_entropy", logits)?;
        let v = self.value(logits);
        let c = v.cols();
        let b = v.rows();
        if labels.len() != b {
            return Err(shape_err("cross_entropy", format!("{} rows vs {} labels", b, labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: c });
        }
        let mut probs = Vec::with_capacity(v.numel());
        let mut loss = T::zero();
        for (row, &y) in v.data().chunks_exact(c).zip(labels) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let s: T = row.iter().map(|&x| (x - mx).exp()).sum();
            let lse = mx + s.ln();
            loss += lse - row[y];
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let loss = loss / T::of(b as f64);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    fn accumulate(&self, adj: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = adj[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, id: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (k, m) = (self.shape(*b)[0], self.shape(*b)[1]);
                // dA = G * B^T, computed as row axpys against the transpose
                let mut bt = vec![T::zero(); k * m];
                for (r, brow) in bv.chunks_exact(m).enumerate() {
                    for (c, &x) in brow.iter().enumerate() {
                        bt[c * k + r] = x;
                    }
                }
                self.accumulate(adj, *a, |da| {
                    for (darow, grow) in da.chunks_exact_mut(k).zip(g.chunks_exact(m)) {
                        for (&x, btrow) in grow.iter().zip(bt.chunks_exact(k)) {
                            if x == T::zero() {
                                continue;
                            }
                            for (d, &y) in darow.iter_mut().zip(btrow) {
                                *d += x * y;
                            }
                        }
                    }
                });
                self.accumulate(adj, *b, |db| {
                    for (arow, grow) in av.chunks_exact(k).zip(g.chunks_exact(m)) {
                        for (&x, dbrow) in arow.iter().zip(db.chunks_exact_mut(m)) {
                            if x == T::zero() {
                                continue;
                            }
                            for (d, &y) in dbrow.iter_mut().zip(grow) {
                                *d += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                self.accumulate(adj, *a, |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                self.accumulate(adj, *b, |db| {
                    for row in g.chunks_exact(db.len()) {
                        db.iter_mut().zip(row).for_each(|(d, &x)| *d += sign * x);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let nb = bv.len();
                self.accumulate(adj, *a, |da| {
                    for (drow, grow) in da.chunks_exact_mut(nb).zip(g.chunks_exact(nb)) {
                        for ((d, &x), &y) in drow.iter_mut().zip(grow).zip(bv) {
                            *d += x * y;
                        }
                    }
                });
                self.accumulate(adj, *b, |db| {
                    for (grow, arow) in g.chunks_exact(nb).zip(av.chunks_exact(nb)) {
                        for ((d, &x), &y) in db.iter_mut().zip(grow).zip(arow) {
                            *d += x * y;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(adj, *a, |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x * *c));
            }
            Op::Relu(a) => {
                let out = node.value.data();
                self.accumulate(adj, *a, |da| {
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *d += x;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                self.accumulate(adj, *x, |dx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaxReduce { x, axis, argmax } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                self.accumulate(adj, *x, |dx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let r = o * inner + i;
                            dx[o * len * inner + argmax[r] * inner + i] += g[r];
                        }
                    }
                });
            }
            Op::MeanReduce { x, axis } | Op::SumReduce { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let f = if matches!(node.op, Op::MeanReduce { .. }) {
                    T::one() / T::of(len as f64)
                } else {
                    T::one()
                };
                self.accumulate(adj, *x, |dx| {
                    for o in 0..outer {
                        for j in 0..len {
                            let d = &mut dx[(o * len + j) * inner..(o * len + j + 1) * inner];
                            for (dd, &gg) in d.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *dd += gg * f;
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                self.accumulate(adj, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Gather { x, index } => {
                let row = node.value.numel() / index.len();
                self.accumulate(adj, *x, |dx| {
                    for (k, &i) in index.iter().enumerate() {
                        let dst = &mut dx[i * row..(i + 1) * row];
                        for (d, &s) in dst.iter_mut().zip(&g[k * row..(k + 1) * row]) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    self.accumulate(adj, x, |dx| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut dx[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    });
                    offset += len;
                }
            }
            Op::Reshape(x) => {
                self.accumulate(adj, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, &s)| *d += s));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        dgamma[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                    }
                }
                self.accumulate(adj, *gamma, |d| d.iter_mut().zip(&dgamma).for_each(|(a, &b)| *a += b));
                self.accumulate(adj, *beta, |d| d.iter_mut().zip(&dbeta).for_each(|(a, &b)| *a += b));
                let n = T::of(rows as f64);
                self.accumulate(adj, *x, |dx| {
                    for ((drow, grow), hrow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            let scale = gam[j] * inv_std[j];
                            if *batch_stats {
                                // d/dx of normalized output with batch mean/var
                                drow[j] += scale * (grow[j] - dbeta[j] / n - hrow[j] * dgamma[j] / n);
                            } else {
                                drow[j] += scale * grow[j];
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / T::of(labels.len() as f64);
                self.accumulate(adj, *logits, |dl| {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { T::one() } else { T::zero() };
                            dl[r * c + j] += (probs[r * c + j] - onehot) * scale;
                        }
                    }
                });
            }
        }
    }
}

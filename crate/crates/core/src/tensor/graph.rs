use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::mat::{gemm_into, Mat, Scalar};
use super::params::{Gradients, ParamId, ParamStore};
use crate::{Error, Result};

/// Added to the variance in [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-12;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// A node handle. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    graph: u64,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    OneMinus(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    TileRows(Var),
    SumAll(Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat<T>, inv_std: Vec<T> },
    Attention { q: Var, k: Var, v: Var, groups: usize, heads: usize, probs: Vec<T> },
    NmseLoss { est: Var, truth: Var, groups: usize, inv_power: Vec<T> },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Mat<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes can only reference earlier nodes, so the graph
/// is acyclic by construction and backward visits nodes in reverse creation
/// order.
pub struct Graph<'a, T: Scalar> {
    id: u64,
    nodes: Vec<Node<'a, T>>,
    params: HashMap<ParamId, Var>,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every node reached by [`Graph::backward`].
pub struct NodeGrads<T> {
    graph: u64,
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> NodeGrads<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }
}

fn shape_err<T>(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<T> {
    Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")))
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    let one = T::one();
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let du = c * (one + T::from_f64(3.0) * a * x * x);
    let dy = half * (one + t) + half * x * (one - t * t) * du;
    (y, dy)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Sum that does not depend on the order of `terms`.
fn order_free_sum<T: Scalar>(terms: &mut [T]) -> T {
    if terms.len() > 2 {
        terms.sort_unstable_by(T::total_order);
    }
    terms.iter().copied().fold(T::zero(), |a, b| a + b)
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Shape("variable does not belong to this graph".into()));
        }
        Ok(())
    }

    fn push(&mut self, value: Cow<'a, Mat<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { idx: self.nodes.len() - 1, graph: self.id }
    }

    fn node_needs(&self, v: Var) -> bool {
        self.nodes[v.idx].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        assert_eq!(v.graph, self.id, "variable does not belong to this graph");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, m: Mat<T>) -> Var {
        self.push(Cow::Owned(m), Op::Constant, false)
    }

    /// A borrowed value that receives no gradient.
    pub fn input(&mut self, m: &'a Mat<T>) -> Var {
        self.push(Cow::Borrowed(m), Op::Constant, false)
    }

    /// A free variable whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, m: Mat<T>) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, true)
    }

    /// A parameter from `store`; its gradient accumulates into the
    /// [`Gradients`] passed to backward. Repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    fn unary(&mut self, x: Var, value: Mat<T>, op: Op<T>) -> Var {
        let needs = self.node_needs(x);
        self.push(Cow::Owned(value), op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, value: Mat<T>, op: Op<T>) -> Var {
        let needs = self.node_needs(a) || self.node_needs(b);
        self.push(Cow::Owned(value), op, needs)
    }

    /// `[m,k]·[k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, out, Op::MatMul(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Mat<T>> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return shape_err(name, x.shape(), y.shape());
        }
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(&p, &q)| f(p, q)).collect();
        Mat::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.binary(a, b, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.binary(a, b, out, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "hadamard", |p, q| p * q)?;
        Ok(self.binary(a, b, out, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v * s);
        Ok(self.unary(x, out, Op::Scale(x, s)))
    }

    /// `s·x` for a `1×1` variable `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        if self.shape(s) != (1, 1) {
            return shape_err("scale_by expects a 1x1 scale", self.shape(s), (1, 1));
        }
        let k = self.value(s).get(0, 0);
        let out = self.value(x).map(|v| k * v);
        Ok(self.binary(x, s, out, Op::ScaleBy(x, s)))
    }

    fn row_broadcast(&mut self, x: Var, r: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Mat<T>> {
        self.check(x)?;
        self.check(r)?;
        let (xm, rm) = (self.value(x), self.value(r));
        if rm.rows() != 1 || rm.cols() != xm.cols() {
            return shape_err(name, xm.shape(), rm.shape());
        }
        Ok(Mat::from_fn(xm.rows(), xm.cols(), |i, j| f(xm.get(i, j), rm.get(0, j))))
    }

    /// Adds a `1×n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(x, row, "add_row", |p, q| p + q)?;
        Ok(self.binary(x, row, out, Op::AddRow(x, row)))
    }

    /// Multiplies every row of `x` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(x, row, "mul_row", |p, q| p * q)?;
        Ok(self.binary(x, row, out, Op::MulRow(x, row)))
    }

    /// `x·w + b` with `w: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| T::one() - v);
        Ok(self.unary(x, out, Op::OneMinus(x)))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.shape(parts[0]).0;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return shape_err("concat_cols", self.shape(parts[0]), self.shape(p));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let needs = parts.iter().any(|&p| self.node_needs(p));
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Columns `start..start + count`.
    pub fn slice_cols(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        self.check(x)?;
        let m = self.value(x);
        if start + count > m.cols() {
            return Err(Error::Shape(format!("slice {start}..{} of {} columns", start + count, m.cols())));
        }
        let out = Mat::from_fn(m.rows(), count, |i, j| m.get(i, start + j));
        Ok(self.unary(x, out, Op::SliceCols(x, start)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).transpose();
        Ok(self.unary(x, out, Op::Transpose(x)))
    }

    /// Stacks `times` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        self.check(x)?;
        let m = self.value(x);
        let data = m.as_slice().repeat(times);
        let out = Mat::from_vec(m.rows() * times, m.cols(), data)?;
        Ok(self.unary(x, out, Op::TileRows(x)))
    }

    /// Sum of all entries as a `1×1` value.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = Mat::filled(1, 1, self.value(x).sum());
        Ok(self.unary(x, out, Op::SumAll(x)))
    }

    /// Row-wise softmax with max subtraction. A row containing NaN yields NaN.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let m = self.value(x);
        let mut out = m.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mx = if row.iter().any(|v| v.is_nan()) { T::nan() } else { mx };
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        Ok(self.unary(x, out, Op::SoftmaxRows(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(sigmoid);
        Ok(self.unary(x, out, Op::Sigmoid(x)))
    }

    /// Gaussian-error linear unit, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| gelu_parts(v).0);
        Ok(self.unary(x, out, Op::Gelu(x)))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain ⊙ x̂ + bias` with `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        for v in [x, gain, bias] {
            self.check(v)?;
        }
        let m = self.value(x);
        let n = m.cols();
        if self.shape(gain) != (1, n) || self.shape(bias) != (1, n) {
            return shape_err("layer_norm gain/bias", self.shape(gain), (1, n));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let nf = T::from_f64(n as f64);
        let mut xhat = Mat::zeros(m.rows(), n);
        let mut inv_std = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let row = m.row(i);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let out = Mat::from_fn(m.rows(), n, |i, j| xhat.get(i, j) * g.get(0, j) + b.get(0, j));
        let needs = [x, gain, bias].iter().any(|&v| self.node_needs(v));
        Ok(self.push(Cow::Owned(out), Op::LayerNorm { x, gain, bias, xhat, inv_std }, needs))
    }

    /// Multi-head scaled dot-product attention without masking.
    ///
    /// Rows of `q` (and of `k`, `v`) form `groups` equal consecutive blocks;
    /// queries only attend to keys of the same block. Columns split evenly
    /// into `heads`. Sums over keys are evaluated in an order that does not
    /// depend on the key order, so permuting the keys and values of a block
    /// together leaves the output bit-identical.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var> {
        for x in [q, k, v] {
            self.check(x)?;
        }
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        if groups == 0 || heads == 0 || qm.rows() % groups != 0 || km.rows() % groups != 0 {
            return Err(Error::Shape(format!("attention: {} / {} rows in {groups} groups", qm.rows(), km.rows())));
        }
        if km.rows() != vm.rows() || qm.cols() != km.cols() || qm.cols() % heads != 0 || vm.cols() % heads != 0 {
            return Err(Error::Shape(format!(
                "attention q {:?}, k {:?}, v {:?} with {heads} heads",
                qm.shape(),
                km.shape(),
                vm.shape()
            )));
        }
        let (tq, tk) = (qm.rows() / groups, km.rows() / groups);
        let (dk, dv) = (qm.cols() / heads, vm.cols() / heads);
        let scale = T::one() / T::from_f64(dk as f64).sqrt();
        let mut out = Mat::zeros(qm.rows(), vm.cols());
        let mut probs = vec![T::zero(); groups * heads * tq * tk];
        let mut terms = vec![T::zero(); tk];
        for g in 0..groups {
            for h in 0..heads {
                for i in 0..tq {
                    let qi = &qm.row(g * tq + i)[h * dk..(h + 1) * dk];
                    let p = &mut probs[((g * heads + h) * tq + i) * tk..][..tk];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = &km.row(g * tk + j)[h * dk..(h + 1) * dk];
                        *pj = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    }
                    let mx = p.iter().copied().fold(T::neg_infinity(), T::max);
                    for (t, pj) in terms.iter_mut().zip(p.iter_mut()) {
                        *pj = (*pj - mx).exp();
                        *t = *pj;
                    }
                    let s = order_free_sum(&mut terms);
                    p.iter_mut().for_each(|pj| *pj = *pj / s);
                    let orow = &mut out.row_mut(g * tq + i)[h * dv..(h + 1) * dv];
                    for (d, o) in orow.iter_mut().enumerate() {
                        for (j, t) in terms.iter_mut().enumerate() {
                            *t = p[j] * vm.get(g * tk + j, h * dv + d);
                        }
                        *o = order_free_sum(&mut terms);
                    }
                }
            }
        }
        let needs = [q, k, v].iter().any(|&x| self.node_needs(x));
        Ok(self.push(Cow::Owned(out), Op::Attention { q, k, v, groups, heads, probs }, needs))
    }

    /// Mean over `groups` row blocks of `‖est_g − truth_g‖² / ‖truth_g‖²`.
    /// `truth` receives no gradient.
    pub fn nmse_loss(&mut self, est: Var, truth: Var, groups: usize) -> Result<Var> {
        self.check(est)?;
        self.check(truth)?;
        let (e, t) = (self.value(est), self.value(truth));
        if e.shape() != t.shape() || groups == 0 || e.rows() % groups != 0 {
            return Err(Error::Shape(format!("nmse_loss {:?} vs {:?} in {groups} groups", e.shape(), t.shape())));
        }
        let per = e.rows() / groups * e.cols();
        let mut inv_power = Vec::with_capacity(groups);
        let mut total = T::zero();
        for g in 0..groups {
            let (es, ts) = (&e.as_slice()[g * per..(g + 1) * per], &t.as_slice()[g * per..(g + 1) * per]);
            let power: T = ts.iter().map(|&x| x * x).sum();
            if power == T::zero() {
                return Err(Error::Domain("nmse reference has zero norm".into()));
            }
            let err: T = es.iter().zip(ts).map(|(&a, &b)| (a - b) * (a - b)).sum();
            total += err / power;
            inv_power.push(T::one() / power);
        }
        let out = Mat::filled(1, 1, total / T::from_f64(groups as f64));
        let needs = self.node_needs(est);
        Ok(self.push(Cow::Owned(out), Op::NmseLoss { est, truth, groups, inv_power }, needs))
    }

    /// Back-propagates from a `1×1` `loss`. Parameter gradients are added to
    /// `params` (if given); all node gradients are returned.
    pub fn backward(&self, loss: Var, mut params: Option<&mut Gradients<T>>) -> Result<NodeGrads<T>> {
        self.check(loss)?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Mat::filled(1, 1, T::one()));
        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads, &mut params);
            }
            grads[idx] = Some(g);
        }
        Ok(NodeGrads { graph: self.id, grads })
    }

    fn propagate(&self, node: &Node<'a, T>, g: &Mat<T>, grads: &mut [Option<Mat<T>>], params: &mut Option<&mut Gradients<T>>) {
        let val = |v: Var| -> &Mat<T> { &self.nodes[v.idx].value };
        let wants = |v: Var| self.nodes[v.idx].needs_grad;
        // Accumulates into the gradient slot of `v`, allocating zeros first.
        fn slot<'g, T: Scalar>(grads: &'g mut [Option<Mat<T>>], v: Var, shape: (usize, usize)) -> &'g mut Mat<T> {
            grads[v.idx].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
        }
        // Elementwise rule `f(index, upstream)` for same-shape ops.
        let acc_map = |grads: &mut [Option<Mat<T>>], v: Var, f: &dyn Fn(usize, T) -> T| {
            if wants(v) {
                let s = slot(grads, v, val(v).shape());
                for (i, (x, &u)) in s.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                    *x += f(i, u);
                }
            }
        };
        // Rule `f(index)` for ops reducing to a 1×1 output.
        let acc_reduce = |grads: &mut [Option<Mat<T>>], v: Var, f: &dyn Fn(usize) -> T| {
            if wants(v) {
                let s = slot(grads, v, val(v).shape());
                for (i, x) in s.as_mut_slice().iter_mut().enumerate() {
                    *x += f(i);
                }
            }
        };
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::Param(id) => {
                if let Some(p) = params.as_deref_mut() {
                    p.accumulate(*id, g);
                }
            }
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let s = slot(grads, *a, val(*a).shape());
                    gemm_into(g, false, val(*b), true, s, T::one());
                }
                if wants(*b) {
                    let s = slot(grads, *b, val(*b).shape());
                    gemm_into(val(*a), true, g, false, s, T::one());
                }
            }
            Op::Add(a, b) => {
                acc_map(grads, *a, &|_, x| x);
                acc_map(grads, *b, &|_, x| x);
            }
            Op::Sub(a, b) => {
                acc_map(grads, *a, &|_, x| x);
                acc_map(grads, *b, &|_, x| -x);
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (val(*a).as_slice(), val(*b).as_slice());
                acc_map(grads, *a, &|i, x| x * bv[i]);
                acc_map(grads, *b, &|i, x| x * av[i]);
            }
            Op::Scale(x, s) => acc_map(grads, *x, &|_, v| v * *s),
            Op::ScaleBy(x, s) => {
                let k = val(*s).get(0, 0);
                acc_map(grads, *x, &|_, v| v * k);
                if wants(*s) {
                    let d: T = g.as_slice().iter().zip(val(*x).as_slice()).map(|(&a, &b)| a * b).sum();
                    slot(grads, *s, (1, 1)).as_mut_slice()[0] += d;
                }
            }
            Op::AddRow(x, r) => {
                acc_map(grads, *x, &|_, v| v);
                if wants(*r) {
                    let s = slot(grads, *r, val(*r).shape());
                    for i in 0..g.rows() {
                        for (o, &v) in s.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (val(*x), val(*r));
                let n = xv.cols();
                acc_map(grads, *x, &|i, v| v * rv.as_slice()[i % n]);
                if wants(*r) {
                    let s = slot(grads, *r, rv.shape());
                    for i in 0..g.rows() {
                        for (j, o) in s.as_mut_slice().iter_mut().enumerate() {
                            *o += g.get(i, j) * xv.get(i, j);
                        }
                    }
                }
            }
            Op::OneMinus(x) => acc_map(grads, *x, &|_, v| -v),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let s = slot(grads, p, val(p).shape());
                        for i in 0..g.rows() {
                            for (o, &v) in s.row_mut(i).iter_mut().zip(&g.row(i)[off..off + w]) {
                                *o += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let s = slot(grads, *x, val(*x).shape());
                    for i in 0..g.rows() {
                        for (o, &v) in s.row_mut(i)[*start..].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let s = slot(grads, *x, val(*x).shape());
                    for i in 0..s.rows() {
                        for j in 0..s.cols() {
                            let v = s.get(i, j) + g.get(j, i);
                            s.set(i, j, v);
                        }
                    }
                }
            }
            Op::TileRows(x) => {
                if wants(*x) {
                    let s = slot(grads, *x, val(*x).shape());
                    let n = s.len();
                    for (i, &v) in g.as_slice().iter().enumerate() {
                        s.as_mut_slice()[i % n] += v;
                    }
                }
            }
            Op::SumAll(x) => {
                let d = g.get(0, 0);
                acc_reduce(grads, *x, &|_| d);
            }
            Op::SoftmaxRows(x) => {
                if wants(*x) {
                    let y = &node.value;
                    let s = slot(grads, *x, y.shape());
                    for i in 0..y.rows() {
                        let dot: T = y.row(i).iter().zip(g.row(i)).map(|(&a, &b)| a * b).sum();
                        for (j, o) in s.row_mut(i).iter_mut().enumerate() {
                            *o += y.get(i, j) * (g.get(i, j) - dot);
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.as_slice();
                acc_map(grads, *x, &|i, v| v * y[i] * (T::one() - y[i]));
            }
            Op::Gelu(x) => {
                let xv = val(*x).as_slice();
                acc_map(grads, *x, &|i, v| v * gelu_parts(xv[i]).1);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = val(*gain);
                let n = xhat.cols();
                let nf = T::from_f64(n as f64);
                if wants(*x) {
                    let s = slot(grads, *x, xhat.shape());
                    let mut dxhat = vec![T::zero(); n];
                    for i in 0..xhat.rows() {
                        for (j, d) in dxhat.iter_mut().enumerate() {
                            *d = g.get(i, j) * gv.get(0, j);
                        }
                        let sum_d: T = dxhat.iter().copied().sum();
                        let sum_dx: T = dxhat.iter().zip(xhat.row(i)).map(|(&a, &b)| a * b).sum();
                        for (j, o) in s.row_mut(i).iter_mut().enumerate() {
                            *o += inv_std[i] / nf * (nf * dxhat[j] - sum_d - xhat.get(i, j) * sum_dx);
                        }
                    }
                }
                if wants(*gain) {
                    let s = slot(grads, *gain, gv.shape());
                    for i in 0..xhat.rows() {
                        for (j, o) in s.as_mut_slice().iter_mut().enumerate() {
                            *o += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                }
                if wants(*bias) {
                    let s = slot(grads, *bias, (1, n));
                    for i in 0..g.rows() {
                        for (o, &v) in s.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Attention { q, k, v, groups, heads, probs } => {
                self.attention_backward(g, (*q, *k, *v), *groups, *heads, probs, grads);
            }
            Op::NmseLoss { est, truth, groups, inv_power } => {
                let (e, t) = (val(*est).as_slice(), val(*truth).as_slice());
                let per = e.len() / groups;
                let c = g.get(0, 0) * T::from_f64(2.0) / T::from_f64(*groups as f64);
                acc_reduce(grads, *est, &|i| c * (e[i] - t[i]) * inv_power[i / per]);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(&self, g: &Mat<T>, (q, k, v): (Var, Var, Var), groups: usize, heads: usize, probs: &[T], grads: &mut [Option<Mat<T>>]) {
        let (qm, km, vm) = (&*self.nodes[q.idx].value, &*self.nodes[k.idx].value, &*self.nodes[v.idx].value);
        let (tq, tk) = (qm.rows() / groups, km.rows() / groups);
        let (dk, dv) = (qm.cols() / heads, vm.cols() / heads);
        let scale = T::one() / T::from_f64(dk as f64).sqrt();
        let mut dq = Mat::zeros(qm.rows(), qm.cols());
        let mut dkm = Mat::zeros(km.rows(), km.cols());
        let mut dvm = Mat::zeros(vm.rows(), vm.cols());
        let mut ds = vec![T::zero(); tk];
        for gi in 0..groups {
            for h in 0..heads {
                for i in 0..tq {
                    let p = &probs[((gi * heads + h) * tq + i) * tk..][..tk];
                    let go = &g.row(gi * tq + i)[h * dv..(h + 1) * dv];
                    for j in 0..tk {
                        let vj = &vm.row(gi * tk + j)[h * dv..(h + 1) * dv];
                        ds[j] = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                        for (o, &x) in dvm.row_mut(gi * tk + j)[h * dv..(h + 1) * dv].iter_mut().zip(go) {
                            *o += p[j] * x;
                        }
                    }
                    let dot: T = p.iter().zip(&ds).map(|(&a, &b)| a * b).sum();
                    for j in 0..tk {
                        let dsj = p[j] * (ds[j] - dot) * scale;
                        let kj = &km.row(gi * tk + j)[h * dk..(h + 1) * dk];
                        for (o, &x) in dq.row_mut(gi * tq + i)[h * dk..(h + 1) * dk].iter_mut().zip(kj) {
                            *o += dsj * x;
                        }
                        let qi = &qm.row(gi * tq + i)[h * dk..(h + 1) * dk];
                        for (o, &x) in dkm.row_mut(gi * tk + j)[h * dk..(h + 1) * dk].iter_mut().zip(qi) {
                            *o += dsj * x;
                        }
                    }
                }
            }
        }
        for (var, d) in [(q, dq), (k, dkm), (v, dvm)] {
            if self.nodes[var.idx].needs_grad {
                match &mut grads[var.idx] {
                    Some(s) => s.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            }
        }
    }
}

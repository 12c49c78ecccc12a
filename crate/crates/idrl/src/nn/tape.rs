//! Reverse-mode differentiation over a replayable operation tape.
//!
//! Nodes carry dense `f64` matrices and are evaluated eagerly as they are
//! pushed. `backward` does not mutate values: it appends the adjoint
//! computation to the tape as ordinary nodes, so a scalar built from
//! first-pass gradients (such as an input-gradient penalty) can itself be
//! differentiated by a second `backward` call.

use std::rc::Rc;

use ndarray::Array2;

pub type Arr = Array2<f64>;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MinElem(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumAxis0(Var),
    SumAxis1(Var),
    BroadcastScalar(Var, usize, usize),
    BroadcastRow(Var, usize),
    BroadcastCol(Var, usize),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    PadCols(Var, usize, usize),
    TakePerRow(Var, Rc<Vec<usize>>),
    PutPerRow(Var, Rc<Vec<usize>>, usize),
}

struct Node {
    op: Op,
    value: Arr,
    needs_grad: bool,
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "expected a scalar node");
        a[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Arr, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input node.
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Node treated as constant by every backward pass.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Arr::from_elem((1, 1), x))
    }

    /// Constant snapshot of a node's current value (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let val = self.value(v).clone();
        self.constant(val)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
        let value = va.dot(vb);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(Op::Transpose(a), value, ng)
    }

    fn binary_elem(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Arr {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.dim(), vb.dim(), "elementwise shapes");
        let mut out = va.clone();
        out.zip_mut_with(vb, |x, &y| *x = f(*x, y));
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_elem(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_elem(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_elem(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    /// Elementwise minimum; subgradient follows the smaller branch.
    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary_elem(a, b, f64::min);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MinElem(a, b), value, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| -x);
        let ng = self.needs(a);
        self.push(Op::Neg(a), value, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| c * x);
        let ng = self.needs(a);
        self.push(Op::Scale(a, c), value, ng)
    }

    /// Elementwise x + c.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let ng = self.needs(a);
        self.push(Op::Offset(a, c), value, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(Op::Relu(a), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let ng = self.needs(a);
        self.push(Op::Exp(a), value, ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let ng = self.needs(a);
        self.push(Op::Ln(a), value, ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus_scalar);
        let ng = self.needs(a);
        self.push(Op::Softplus(a), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid_scalar);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let ng = self.needs(a);
        self.push(Op::Sqrt(a), value, ng)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::recip);
        let ng = self.needs(a);
        self.push(Op::Recip(a), value, ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(Op::Clamp(a, lo, hi), value, ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Arr::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::SumAll(a), value, ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over rows: m x n -> 1 x n.
    pub fn sum_axis0(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .sum_axis(ndarray::Axis(0))
            .insert_axis(ndarray::Axis(0));
        let ng = self.needs(a);
        self.push(Op::SumAxis0(a), value, ng)
    }

    /// Sum over columns: m x n -> m x 1.
    pub fn sum_axis1(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .sum_axis(ndarray::Axis(1))
            .insert_axis(ndarray::Axis(1));
        let ng = self.needs(a);
        self.push(Op::SumAxis1(a), value, ng)
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.scalar_value(a);
        let ng = self.needs(a);
        self.push(
            Op::BroadcastScalar(a, rows, cols),
            Arr::from_elem((rows, cols), x),
            ng,
        )
    }

    /// 1 x n -> m x n.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), 1, "broadcast_row expects a 1 x n node");
        let value = v
            .broadcast((rows, v.ncols()))
            .expect("broadcast shape")
            .to_owned();
        let ng = self.needs(a);
        self.push(Op::BroadcastRow(a, rows), value, ng)
    }

    /// m x 1 -> m x n.
    pub fn broadcast_col(&mut self, a: Var, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.ncols(), 1, "broadcast_col expects an m x 1 node");
        let value = v
            .broadcast((v.nrows(), cols))
            .expect("broadcast shape")
            .to_owned();
        let ng = self.needs(a);
        self.push(Op::BroadcastCol(a, cols), value, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.nrows(), vb.nrows(), "concat_cols row counts");
        let value =
            ndarray::concatenate(ndarray::Axis(1), &[va.view(), vb.view()]).expect("concat");
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::ConcatCols(a, b), value, ng)
    }

    /// Columns [from, to).
    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![.., from..to])
            .to_owned();
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, from, to), value, ng)
    }

    /// Embed an m x w block into m x total zeros starting at column `at`.
    pub fn pad_cols(&mut self, a: Var, at: usize, total: usize) -> Var {
        let v = self.value(a);
        let mut value = Arr::zeros((v.nrows(), total));
        value.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
        let ng = self.needs(a);
        self.push(Op::PadCols(a, at, total), value, ng)
    }

    /// out[i, 0] = a[i, idx[i]].
    pub fn take_per_row(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), idx.len(), "take_per_row index count");
        let mut value = Arr::zeros((v.nrows(), 1));
        for (i, &j) in idx.iter().enumerate() {
            value[(i, 0)] = v[(i, j)];
        }
        let ng = self.needs(a);
        self.push(Op::TakePerRow(a, idx), value, ng)
    }

    /// Inverse scatter of `take_per_row`: m x 1 into m x n zeros.
    pub fn put_per_row(&mut self, a: Var, idx: Rc<Vec<usize>>, cols: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.ncols(), 1, "put_per_row expects an m x 1 node");
        let mut value = Arr::zeros((v.nrows(), cols));
        for (i, &j) in idx.iter().enumerate() {
            value[(i, j)] = v[(i, 0)];
        }
        let ng = self.needs(a);
        self.push(Op::PutPerRow(a, idx, cols), value, ng)
    }

    /// Affine layer: x @ w + bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        let rows = self.value(xw).nrows();
        let bb = self.broadcast_row(b, rows);
        self.add(xw, bb)
    }

    /// Row-wise log-sum-exp with a detached max shift: m x n -> m x 1.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, n) = v.dim();
        let mut shift = Arr::zeros((m, 1));
        for i in 0..m {
            shift[(i, 0)] = v.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        let shift = self.constant(shift);
        let shift_b = self.broadcast_col(shift, n);
        let centered = self.sub(a, shift_b);
        let e = self.exp(centered);
        let s = self.sum_axis1(e);
        let l = self.ln(s);
        self.add(l, shift)
    }

    fn accumulate(&mut self, slot: &mut Option<Var>, contribution: Var) {
        *slot = Some(match slot.take() {
            None => contribution,
            Some(prev) => self.add(prev, contribution),
        });
    }

    /// Reverse pass from a scalar node. Returns one gradient node per
    /// requested var (a zeros constant if the loss does not depend on it).
    ///
    /// The adjoints are appended to the tape as ordinary nodes, so any
    /// scalar formed from them can be differentiated again.
    pub fn backward(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(y).dim(), (1, 1), "backward needs a scalar");
        let mut adj: Vec<Option<Var>> = vec![None; y.0 + 1];
        let seed = self.constant(Arr::ones((1, 1)));
        adj[y.0] = Some(seed);

        for id in (0..=y.0).rev() {
            let Some(g) = adj[id] else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let bt = self.transpose(b);
                        let ga = self.matmul(g, bt);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(b) {
                        let at = self.transpose(a);
                        let gb = self.matmul(at, g);
                        self.accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(a) {
                        let ga = self.transpose(g);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        self.accumulate(&mut adj[a.0], g);
                    }
                    if self.needs(b) {
                        self.accumulate(&mut adj[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        self.accumulate(&mut adj[a.0], g);
                    }
                    if self.needs(b) {
                        let gb = self.neg(g);
                        self.accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let ga = self.mul(g, b);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(b) {
                        let gb = self.mul(g, a);
                        self.accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::MinElem(a, b) => {
                    let mask_a = {
                        let va = self.value(a);
                        let vb = self.value(b);
                        let mut m = va.clone();
                        m.zip_mut_with(vb, |x, &y| *x = if *x <= y { 1.0 } else { 0.0 });
                        m
                    };
                    if self.needs(a) {
                        let mc = self.constant(mask_a.clone());
                        let ga = self.mul(g, mc);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(b) {
                        let inv = mask_a.mapv(|x| 1.0 - x);
                        let mc = self.constant(inv);
                        let gb = self.mul(g, mc);
                        self.accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::Neg(a) => {
                    if self.needs(a) {
                        let ga = self.neg(g);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(a) {
                        let ga = self.scale(g, c);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Offset(a, _) => {
                    if self.needs(a) {
                        self.accumulate(&mut adj[a.0], g);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(a) {
                        let mask = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                        let mc = self.constant(mask);
                        let ga = self.mul(g, mc);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(a) {
                        let y_var = Var(id);
                        let yy = self.mul(y_var, y_var);
                        let one_minus = {
                            let ones = Arr::ones(self.value(yy).dim());
                            let ones = self.constant(ones);
                            self.sub(ones, yy)
                        };
                        let ga = self.mul(g, one_minus);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Exp(a) => {
                    if self.needs(a) {
                        let ga = self.mul(g, Var(id));
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Ln(a) => {
                    if self.needs(a) {
                        let r = self.recip(a);
                        let ga = self.mul(g, r);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Softplus(a) => {
                    if self.needs(a) {
                        let s = self.sigmoid(a);
                        let ga = self.mul(g, s);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(a) {
                        let y_var = Var(id);
                        let ones = Arr::ones(self.value(y_var).dim());
                        let ones = self.constant(ones);
                        let one_minus = self.sub(ones, y_var);
                        let d = self.mul(y_var, one_minus);
                        let ga = self.mul(g, d);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Sqrt(a) => {
                    if self.needs(a) {
                        let r = self.recip(Var(id));
                        let half = self.scale(r, 0.5);
                        let ga = self.mul(g, half);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Recip(a) => {
                    if self.needs(a) {
                        let y_var = Var(id);
                        let yy = self.mul(y_var, y_var);
                        let d = self.neg(yy);
                        let ga = self.mul(g, d);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    if self.needs(a) {
                        let mask = self
                            .value(a)
                            .mapv(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
                        let mc = self.constant(mask);
                        let ga = self.mul(g, mc);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::SumAll(a) => {
                    if self.needs(a) {
                        let (r, c) = self.value(a).dim();
                        let ga = self.broadcast_scalar(g, r, c);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::SumAxis0(a) => {
                    if self.needs(a) {
                        let rows = self.value(a).nrows();
                        let ga = self.broadcast_row(g, rows);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::SumAxis1(a) => {
                    if self.needs(a) {
                        let cols = self.value(a).ncols();
                        let ga = self.broadcast_col(g, cols);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::BroadcastScalar(a, _, _) => {
                    if self.needs(a) {
                        let ga = self.sum_all(g);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::BroadcastRow(a, _) => {
                    if self.needs(a) {
                        let ga = self.sum_axis0(g);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::BroadcastCol(a, _) => {
                    if self.needs(a) {
                        let ga = self.sum_axis1(g);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(a).ncols();
                    let cb = self.value(b).ncols();
                    if self.needs(a) {
                        let ga = self.slice_cols(g, 0, ca);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                    if self.needs(b) {
                        let gb = self.slice_cols(g, ca, ca + cb);
                        self.accumulate(&mut adj[b.0], gb);
                    }
                }
                Op::SliceCols(a, from, _to) => {
                    if self.needs(a) {
                        let total = self.value(a).ncols();
                        let ga = self.pad_cols(g, from, total);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::PadCols(a, at, _total) => {
                    if self.needs(a) {
                        let w = self.value(a).ncols();
                        let ga = self.slice_cols(g, at, at + w);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::TakePerRow(a, idx) => {
                    if self.needs(a) {
                        let cols = self.value(a).ncols();
                        let ga = self.put_per_row(g, idx, cols);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
                Op::PutPerRow(a, idx, _) => {
                    if self.needs(a) {
                        let ga = self.take_per_row(g, idx);
                        self.accumulate(&mut adj[a.0], ga);
                    }
                }
            }
        }

        wrt.iter()
            .map(|v| match adj.get(v.0).and_then(|slot| *slot) {
                Some(g) => g,
                None => {
                    let dim = self.value(*v).dim();
                    self.constant(Arr::zeros(dim))
                }
            })
            .collect()
    }
}

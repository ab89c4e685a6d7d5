//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is a 2-D array: a single vector is a `1×n` row, a
//! batch of vectors is an `m×n` matrix. Operations append nodes to the tape in
//! evaluation order, so the node index is already a topological order and
//! [`Graph::backward`] is a single reverse sweep that touches every node at
//! most once.
//!
//! Parameters are bound by reference (see [`Graph::bind`]); building a graph
//! never copies weights, which keeps per-step rollout evaluation cheap.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamSet};
use super::Real;
use crate::error::{ensure, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    ClampMin(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    SumAll(Var),
    SumCols(Var),
    SoftmaxRows(Var),
    GatherCols(Var, Vec<usize>),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Array2<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Leaf handles for every parameter of one [`ParamSet`], in id order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
    trainable: bool,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }
}

/// The recorded computation. `'p` is the lifetime of borrowed parameters.
pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Real> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Array2<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`, or `None` when no path reaches it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Number of nodes the backward sweep processed.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }

    /// Gradients for every parameter behind `binding`, zero-filled where the
    /// loss does not depend on a parameter.
    pub fn for_binding(&self, graph: &Graph<'_, T>, binding: &Binding) -> Vec<Array2<T>> {
        binding
            .vars
            .iter()
            .map(|&v| match self.wrt(v) {
                Some(g) => g.clone(),
                None => Array2::zeros(graph.value(v).raw_dim()),
            })
            .collect()
    }
}

fn acc<T: Real>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// The `1×1` value of `v` as a scalar.
    pub fn scalar_value(&self, v: Var) -> T {
        self.value(v)[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, Array2<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Array2<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        // Nodes without a differentiable ancestor are stored as plain constants.
        let op = if rg { op } else { Op::Leaf };
        self.push(Cow::Owned(value), op, rg)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A differentiable leaf owned by the graph.
    pub fn variable(&mut self, value: Array2<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn row(&mut self, values: &[T]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    pub fn scalar(&mut self, x: T) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Binds every parameter of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &'p ParamSet<T>) -> Binding {
        self.bind_inner(params, true)
    }

    /// Binds parameters as constants: no gradient ever reaches them.
    pub fn bind_frozen(&mut self, params: &'p ParamSet<T>) -> Binding {
        self.bind_inner(params, false)
    }

    fn bind_inner(&mut self, params: &'p ParamSet<T>, trainable: bool) -> Binding {
        let vars = params
            .iter()
            .map(|p| self.push(Cow::Borrowed(p.value()), Op::Leaf, trainable))
            .collect();
        Binding { vars, trainable }
    }

    /// Stop-gradient: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        ensure!(k == k2, Config, "matmul: {m}x{k} · {k2}x{n}");
        let y = self.value(a).dot(self.value(b));
        Ok(self.push_op(y, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            Config,
            "{what}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a) + self.value(b);
        Ok(self.push_op(y, Op::Add(a, b), &[a, b]))
    }

    /// `a` (m×n) plus the row vector `b` (1×n) broadcast down the rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.shape(a);
        ensure!(self.shape(b) == (1, n), Config, "add_row: bias {:?} for width {n}", self.shape(b));
        let y = self.value(a) + self.value(b);
        Ok(self.push_op(y, Op::AddRow(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a) - self.value(b);
        Ok(self.push_op(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a) * self.value(b);
        Ok(self.push_op(y, Op::Mul(a, b), &[a, b]))
    }

    /// `a` (m×n) scaled row-wise by the column `c` (m×1).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, _) = self.shape(a);
        ensure!(self.shape(c) == (m, 1), Config, "mul_col: column {:?} for {m} rows", self.shape(c));
        let y = self.value(a) * self.value(c);
        Ok(self.push_op(y, Op::MulCol(a, c), &[a, c]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let y = self.value(a) / self.value(b);
        Ok(self.push_op(y, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a) * c;
        self.push_op(y, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a) + c;
        self.push_op(y, Op::AddScalar(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let y = self.value(a).mapv(f);
        self.push_op(y, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, Op::Elu(a), |x| if x > T::zero() { x } else { x.exp() - T::one() })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), |x| x.ln())
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), |x| x.abs())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise square root; the backward pass treats `sqrt'(0)` as finite
    /// so norms of exactly-zero vectors do not poison gradients.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Var {
        self.map(a, Op::ClampMin(a, lo), move |x| x.max(lo))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat_cols: no inputs");
        let m = self.shape(parts[0]).0;
        for &p in parts {
            ensure!(self.shape(p).0 == m, Config, "concat_cols: row counts differ");
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat shapes checked");
        Ok(self.push_op(y, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks inputs vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat_rows: no inputs");
        let n = self.shape(parts[0]).1;
        for &p in parts {
            ensure!(self.shape(p).1 == n, Config, "concat_rows: column counts differ");
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat shapes checked");
        Ok(self.push_op(y, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (_, n) = self.shape(a);
        ensure!(start < end && end <= n, Config, "slice_cols {start}..{end} of width {n}");
        let y = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push_op(y, Op::SliceCols(a, start), &[a]))
    }

    /// Row gather: output row `r` is input row `idx[r]`. Rows may repeat.
    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (m, _) = self.shape(a);
        ensure!(idx.iter().all(|&i| i < m), Contract, "select_rows: index out of {m} rows");
        let y = self.value(a).select(Axis(0), &idx);
        Ok(self.push_op(y, Op::SelectRows(a, idx), &[a]))
    }

    /// Scatter-sum of rows: output row `seg[r]` accumulates input row `r`.
    pub fn segment_sum(&mut self, a: Var, seg: Vec<usize>, segments: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        ensure!(seg.len() == m, Contract, "segment_sum: {} ids for {m} rows", seg.len());
        ensure!(seg.iter().all(|&s| s < segments), Contract, "segment_sum: id out of range");
        let mut y = Array2::zeros((segments, n));
        for (r, &sidx) in seg.iter().enumerate() {
            let mut out = y.row_mut(sidx);
            out += &self.value(a).row(r);
        }
        Ok(self.push_op(y, Op::SegmentSum(a, seg), &[a]))
    }

    /// Row-major reshape preserving the element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        ensure!(m * n == rows * cols, Config, "reshape {m}x{n} -> {rows}x{cols}");
        let data: Vec<T> = self.value(a).iter().copied().collect();
        let y = Array2::from_shape_vec((rows, cols), data).expect("reshape count checked");
        Ok(self.push_op(y, Op::Reshape(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).t().as_standard_layout().into_owned();
        self.push_op(y, Op::Transpose(a), &[a])
    }

    /// Sum of all entries as a `1×1` value.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push_op(y, Op::SumAll(a), &[a])
    }

    /// Per-row sums: `m×n → m×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let y = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push_op(y, Op::SumCols(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        for mut row in y.rows_mut() {
            let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push_op(y, Op::SoftmaxRows(a), &[a])
    }

    /// Picks column `idx[r]` from each row `r`: `m×n → m×1`.
    pub fn gather_cols(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (m, n) = self.shape(a);
        ensure!(idx.len() == m, Contract, "gather_cols: {} indices for {m} rows", idx.len());
        ensure!(idx.iter().all(|&i| i < n), Contract, "gather_cols: column out of {n}");
        let v = self.value(a);
        let y = Array2::from_shape_fn((m, 1), |(r, _)| v[[r, idx[r]]]);
        Ok(self.push_op(y, Op::GatherCols(a, idx), &[a]))
    }

    /// Mean of the entries of `a` weighted by the 0/1 `mask` of the same
    /// shape. An all-zero mask yields exactly zero with zero gradients.
    pub fn masked_mean(&mut self, a: Var, mask: &Array2<T>) -> Result<Var> {
        ensure!(self.shape(a) == mask.dim(), Contract, "masked_mean: mask shape");
        let count = mask.sum();
        let m = self.constant(mask.clone());
        let prod = self.mul(a, m)?;
        let total = self.sum_all(prod);
        let denom = if count > T::zero() { count } else { T::one() };
        Ok(self.scale(total, T::one() / denom))
    }

    /// Reverse sweep from the `1×1` output `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        ensure!(self.shape(loss) == (1, 1), Contract, "backward from non-scalar {:?}", self.shape(loss));
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            visited += 1;
            self.propagate(idx, &gy, &mut grads);
            // Interior gradients are dropped as soon as they are consumed.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(gy);
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, idx: usize, gy: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let node = &self.nodes[idx];
        let y = &*node.value;
        let val = |v: Var| &*self.nodes[v.0].value;
        let mut send = |v: Var, g: Array2<T>| {
            if self.nodes[v.0].requires_grad {
                acc(&mut grads[v.0], g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                send(*a, gy.dot(&val(*b).t()));
                send(*b, val(*a).t().dot(gy));
            }
            Op::Add(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.clone());
            }
            Op::AddRow(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Sub(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.mapv(|g| -g));
            }
            Op::Mul(a, b) => {
                send(*a, gy * val(*b));
                send(*b, gy * val(*a));
            }
            Op::MulCol(a, c) => {
                send(*a, gy * val(*c));
                send(*c, (gy * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                send(*a, gy / bv);
                let mut gb = gy * val(*a);
                Zip::from(&mut gb).and(bv).for_each(|g, &b| *g = -*g / (b * b));
                send(*b, gb);
            }
            Op::Scale(a, c) => send(*a, gy * *c),
            Op::AddScalar(a) => send(*a, gy.clone()),
            Op::Sigmoid(a) => send(*a, zip_map(gy, y, |g, y| g * y * (T::one() - y))),
            Op::Tanh(a) => send(*a, zip_map(gy, y, |g, y| g * (T::one() - y * y))),
            Op::Relu(a) => send(*a, zip_map(gy, val(*a), |g, x| if x > T::zero() { g } else { T::zero() })),
            Op::Elu(a) => send(*a, zip_map(gy, y, |g, y| if y > T::zero() { g } else { g * (y + T::one()) })),
            Op::Softplus(a) => send(*a, zip_map(gy, val(*a), |g, x| g * sigmoid(x))),
            Op::Exp(a) => send(*a, gy * y),
            Op::Ln(a) => send(*a, gy / val(*a)),
            Op::Abs(a) => send(*a, zip_map(gy, val(*a), |g, x| g * sign(x))),
            Op::Square(a) => send(*a, zip_map(gy, val(*a), |g, x| g * (x + x))),
            Op::Sqrt(a) => {
                let tiny = T::min_positive_value().sqrt();
                send(*a, zip_map(gy, y, |g, y| if g == T::zero() { g } else { g / (y.max(tiny) + y.max(tiny)) }))
            }
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                send(*a, zip_map(gy, val(*a), |g, x| if x >= lo { g } else { T::zero() }))
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    send(p, gy.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    send(p, gy.slice(s![start..start + h, ..]).to_owned());
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(val(*a).raw_dim());
                let w = gy.ncols();
                ga.slice_mut(s![.., *start..*start + w]).assign(gy);
                send(*a, ga);
            }
            Op::SelectRows(a, rows) => {
                let mut ga = Array2::zeros(val(*a).raw_dim());
                for (r, &src) in rows.iter().enumerate() {
                    let mut out = ga.row_mut(src);
                    out += &gy.row(r);
                }
                send(*a, ga);
            }
            Op::SegmentSum(a, seg) => send(*a, gy.select(Axis(0), seg)),
            Op::Reshape(a) => {
                let data: Vec<T> = gy.iter().copied().collect();
                let ga = Array2::from_shape_vec(val(*a).raw_dim(), data).expect("reshape grad");
                send(*a, ga);
            }
            Op::Transpose(a) => send(*a, gy.t().as_standard_layout().into_owned()),
            Op::SumAll(a) => send(*a, Array2::from_elem(val(*a).raw_dim(), gy[[0, 0]])),
            Op::SumCols(a) => {
                let shape = val(*a).raw_dim();
                send(*a, gy.broadcast(shape).expect("column broadcast").to_owned());
            }
            Op::SoftmaxRows(a) => {
                let mut ga = gy * y;
                let dots = ga.sum_axis(Axis(1));
                Zip::from(ga.rows_mut()).and(y.rows()).and(&dots).for_each(|mut g, yr, &d| {
                    Zip::from(&mut g).and(yr).for_each(|g, &y| *g -= y * d);
                });
                send(*a, ga);
            }
            Op::GatherCols(a, cols) => {
                let mut ga = Array2::zeros(val(*a).raw_dim());
                for (r, &c) in cols.iter().enumerate() {
                    ga[[r, c]] = gy[[r, 0]];
                }
                send(*a, ga);
            }
        }
    }
}

fn zip_map<T: Real>(gy: &Array2<T>, other: &Array2<T>, f: impl Fn(T, T) -> T) -> Array2<T> {
    let mut out = gy.clone();
    Zip::from(&mut out).and(other).for_each(|g, &o| *g = f(*g, o));
    out
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log(1 + e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diamond_accumulates_once_per_path() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(array![[3.0]]);
        let a = g.square(x);
        let b = g.scale(x, 2.0);
        let y = g.add(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap()[[0, 0]], 8.0);
        assert_eq!(grads.nodes_visited(), g.len());
    }

    #[test]
    fn constants_never_receive_gradients() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let x = g.variable(array![[0.5, -1.0]]);
        let p = g.mul(c, x).unwrap();
        let y = g.sum_all(p);
        let grads = g.backward(y).unwrap();
        assert!(grads.wrt(c).is_none());
        assert_eq!(grads.wrt(x).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn matmul_rejects_mismatched_dims() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((2, 3)));
        assert!(matches!(g.matmul(a, b), Err(crate::Error::Config(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f32>::new();
        let a = g.variable(Array2::zeros((2, 2)));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn masked_mean_of_empty_mask_is_zero_with_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(array![[1.0, 2.0, 3.0]]);
        let m = g.masked_mean(x, &array![[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(g.scalar_value(m), 0.0);
        let grads = g.backward(m).unwrap();
        assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sqrt_at_zero_has_finite_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(array![[0.0]]);
        let sq = g.square(x);
        let r = g.sqrt(sq);
        let grads = g.backward(r).unwrap();
        assert!(grads.wrt(x).unwrap()[[0, 0]].is_finite());
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }
}

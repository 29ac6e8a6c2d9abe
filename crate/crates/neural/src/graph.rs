//! Eager tape for reverse-mode differentiation.
//!
//! Every operation computes its value immediately and, when the graph is
//! tracing, records the op and its inputs. Record order is a topological
//! order, so the backward pass is a single reverse sweep.

use std::collections::HashMap;

use crate::error::{NeuralError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Direction of a reduction or normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Across the columns of each row; the result has one column.
    Row,
    /// Down the rows of each column; the result has one row.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalarVar(Var, Var),
    MulCol(Var, Var),
    Pick(Var, Vec<usize>),
    SliceRows(Var, usize),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRow(Var),
    LogSoftmaxRow(Var, Option<Vec<bool>>),
    SumAll(Var),
    SumAxis(Var, Axis),
    Mean(Var),
    MinConst(Var, f64),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    Transpose(Var),
    RepeatRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-parameter gradients produced by [`Graph::gradients`].
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Adds every gradient that belongs to `store` into its gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.entries {
            if id.store() == store.id() {
                store.accumulate(id.index(), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    tracing: bool,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NeuralError::ShapeMismatch { op, lhs: a.shape(), rhs: b.shape() });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row_values(x: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let (r, c) = x.shape();
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        let row = x.row(i);
        let live = |j: usize| mask.is_none_or(|m| !m[i * c + j]);
        let max = (0..c).filter(|&j| live(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in (0..c).filter(|&j| live(j)) {
            let e = (row[j] - max).exp();
            out.set(i, j, e);
            total += e;
        }
        for j in (0..c).filter(|&j| live(j)) {
            out.set(i, j, out.get(i, j) / total);
        }
    }
    out
}

fn log_softmax_row_values(x: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let (r, c) = x.shape();
    let mut out = Tensor::zeros(r, c);
    for i in 0..r {
        let row = x.row(i);
        let live = |j: usize| mask.is_none_or(|m| !m[i * c + j]);
        let max = (0..c).filter(|&j| live(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..c).filter(|&j| live(j)).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
        for j in (0..c).filter(|&j| live(j)) {
            out.set(i, j, row[j] - lse);
        }
    }
    out
}

impl Graph {
    /// A graph that records operations for a later backward pass.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), tracing: true, params: HashMap::new() }
    }

    /// A graph that only evaluates values; `backward` is an error.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), tracing: false, params: HashMap::new() }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.tracing && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a parameter. Repeated binds of the same parameter within one
    /// graph return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.value(id).clone();
        let v = if self.tracing {
            self.nodes.push(Node { value, op: Op::Param(id), requires_grad: true });
            Var(self.nodes.len() - 1)
        } else {
            self.constant(value)
        };
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(NeuralError::ShapeMismatch { op: "matmul", lhs: av.shape(), rhs: bv.shape() });
        }
        let out = av.matmul(bv);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(NeuralError::ShapeMismatch { op: "matmul_t", lhs: av.shape(), rhs: bv.shape() });
        }
        let out = av.matmul_t(bv);
        Ok(self.push(out, Op::MatMulT(a, b), &[a, b]))
    }

    /// Elementwise sum. A `1 x c` right operand is broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let out = av.zip_map(bv, |x, y| x + y);
            return Ok(self.push(out, Op::Add(a, b), &[a, b]));
        }
        if bv.rows() == 1 && bv.cols() == av.cols() {
            let mut out = av.clone();
            let c = av.cols();
            for (i, x) in out.data_mut().iter_mut().enumerate() {
                *x += bv.data()[i % c];
            }
            return Ok(self.push(out, Op::AddRow(a, b), &[a, b]));
        }
        Err(NeuralError::ShapeMismatch { op: "add", lhs: av.shape(), rhs: bv.shape() })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let out = av.zip_map(bv, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product. An `r x 1` right operand is broadcast over
    /// columns.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.cols() == 1 && av.cols() > 1 && bv.rows() == av.rows() {
            let c = av.cols();
            let mut out = av.clone();
            for (i, x) in out.data_mut().iter_mut().enumerate() {
                *x *= bv.data()[i / c];
            }
            return Ok(self.push(out, Op::MulCol(a, b), &[a, b]));
        }
        same_shape("mul", av, bv)?;
        let out = av.zip_map(bv, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(NeuralError::ShapeMismatch { op: "mul_scalar", lhs: self.shape(a), rhs: sv.shape() });
        }
        let k = sv.item();
        let out = self.value(a).map(|x| x * k);
        Ok(self.push(out, Op::MulScalarVar(a, s), &[a, s]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddConst(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        match axis {
            Axis::Row => {
                let out = softmax_row_values(self.value(a), None);
                self.push(out, Op::SoftmaxRow(a), &[a])
            }
            Axis::Col => {
                let t = self.transpose(a);
                let s = self.softmax(t, Axis::Row);
                self.transpose(s)
            }
        }
    }

    /// Row-wise softmax over unmasked entries; masked entries are exactly
    /// zero. `mask[j] == true` excludes an entry; the mask has either one
    /// flag per column (shared by every row) or one per element.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let full = self.full_mask(a, mask)?;
        let logp = self.masked_log_softmax(a, mask)?;
        // Route the gradient through log-softmax so masked entries never see
        // an infinite log.
        let live = self.exp(logp);
        let (r, c) = self.shape(a);
        let keep = Tensor::from_vec(r, c, full.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect());
        let m = self.constant(keep);
        self.mul(live, m)
    }

    fn full_mask(&self, a: Var, mask: &[bool]) -> Result<Vec<bool>> {
        let (r, c) = self.shape(a);
        let full = if mask.len() == c {
            mask.iter().copied().cycle().take(r * c).collect()
        } else if mask.len() == r * c {
            mask.to_vec()
        } else {
            return Err(NeuralError::ShapeMismatch { op: "masked_softmax", lhs: (r, c), rhs: (1, mask.len()) });
        };
        if (0..r).any(|i| full[i * c..(i + 1) * c].iter().all(|&m| m)) {
            return Err(NeuralError::InvalidArgument {
                op: "masked_softmax",
                detail: "a row has every entry masked".into(),
            });
        }
        Ok(full)
    }

    /// Row-wise log-softmax over unmasked entries (mask layout as in
    /// [`masked_softmax`](Self::masked_softmax)). Masked entries hold 0 and
    /// receive no gradient; callers must not read them as probabilities.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let full = self.full_mask(a, mask)?;
        let out = log_softmax_row_values(self.value(a), Some(&full));
        Ok(self.push(out, Op::LogSoftmaxRow(a, Some(full)), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_row_values(self.value(a), None);
        self.push(out, Op::LogSoftmaxRow(a, None), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let out = match axis {
            Axis::Row => Tensor::column_vector((0..r).map(|i| av.row(i).iter().sum()).collect()),
            Axis::Col => {
                let mut s = vec![0.0; c];
                for i in 0..r {
                    for (acc, x) in s.iter_mut().zip(av.row(i)) {
                        *acc += x;
                    }
                }
                Tensor::row_vector(s)
            }
        };
        self.push(out, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(av.sum() / av.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// `min(a, c)` elementwise; at equality the constant branch is taken.
    pub fn min_with_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x.min(c));
        self.push(out, Op::MinConst(a, c), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(NeuralError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(NeuralError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]),
                    rhs: pv.shape(),
                });
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= av.rows()) {
            return Err(NeuralError::InvalidArgument {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {:?}", av.shape()),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        let out = Tensor::from_vec(rows.len(), av.cols(), data);
        Ok(self.push(out, Op::GatherRows(a, rows.to_vec()), &[a]))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.gather_rows(a, &[r])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(NeuralError::InvalidArgument {
                op: "slice_cols",
                detail: format!("columns {start}..{} out of range for {:?}", start + len, av.shape()),
            });
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for i in 0..av.rows() {
            data.extend_from_slice(&av.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(av.rows(), len, data);
        Ok(self.push(out, Op::SliceCols(a, start, len), &[a]))
    }

    /// Rows `start .. start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(NeuralError::InvalidArgument {
                op: "slice_rows",
                detail: format!("rows {start}..{} out of range for {:?}", start + len, av.shape()),
            });
        }
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a, start), &[a]))
    }

    /// One entry per row: `out[i] = a[i, cols[i]]`, an `r x 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if cols.len() != av.rows() || cols.iter().any(|&c| c >= av.cols()) {
            return Err(NeuralError::InvalidArgument {
                op: "pick",
                detail: format!("{} column indices for {:?}", cols.len(), av.shape()),
            });
        }
        let out = Tensor::column_vector(cols.iter().enumerate().map(|(i, &c)| av.get(i, c)).collect());
        Ok(self.push(out, Op::Pick(a, cols.to_vec()), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Stacks `n` copies of a `1 x c` row.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(NeuralError::ShapeMismatch { op: "repeat_rows", lhs: av.shape(), rhs: (1, av.cols()) });
        }
        let mut data = Vec::with_capacity(n * av.cols());
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        let out = Tensor::from_vec(n, av.cols(), data);
        Ok(self.push(out, Op::RepeatRows(a), &[a]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if !self.tracing {
            return Err(NeuralError::Untraced);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NeuralError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let mut send = |v: Var, g: Tensor| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.entries.push((*id, dy)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    send(*a, dy.matmul_t(bv));
                    send(*b, av.t_matmul(&dy));
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    send(*a, dy.matmul(bv));
                    send(*b, dy.t_matmul(av));
                }
                Op::Add(a, b) => {
                    send(*a, dy.clone());
                    send(*b, dy);
                }
                Op::AddRow(a, b) => {
                    let c = dy.cols();
                    let mut row = vec![0.0; c];
                    for (j, g) in dy.data().iter().enumerate() {
                        row[j % c] += g;
                    }
                    send(*a, dy);
                    send(*b, Tensor::row_vector(row));
                }
                Op::Sub(a, b) => {
                    send(*b, dy.map(|g| -g));
                    send(*a, dy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    send(*a, dy.zip_map(bv, |g, x| g * x));
                    send(*b, dy.zip_map(av, |g, x| g * x));
                }
                Op::MulScalarVar(a, s) => {
                    let k = self.value(*s).item();
                    let ds: f64 = dy.data().iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    send(*a, dy.map(|g| g * k));
                    send(*s, Tensor::scalar(ds));
                }
                Op::MulCol(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let c = av.cols();
                    let mut da = dy.clone();
                    for (i, x) in da.data_mut().iter_mut().enumerate() {
                        *x *= bv.data()[i / c];
                    }
                    let db: Vec<f64> = (0..av.rows())
                        .map(|r| dy.row(r).iter().zip(av.row(r)).map(|(g, x)| g * x).sum())
                        .collect();
                    send(*a, da);
                    send(*b, Tensor::column_vector(db));
                }
                Op::Pick(a, cols) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Tensor::zeros(r, c);
                    for (i, &j) in cols.iter().enumerate() {
                        dx.set(i, j, dy.get(i, 0));
                    }
                    send(*a, dx);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Tensor::zeros(r, c);
                    dx.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                    send(*a, dx);
                }
                Op::Scale(a, k) => send(*a, dy.map(|g| g * k)),
                Op::AddConst(a) => send(*a, dy),
                Op::Relu(a) => {
                    send(*a, dy.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Sigmoid(a) => send(*a, dy.zip_map(y, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => send(*a, dy.zip_map(y, |g, t| g * (1.0 - t * t))),
                Op::Exp(a) => send(*a, dy.zip_map(y, |g, e| g * e)),
                Op::Log(a) => send(*a, dy.zip_map(self.value(*a), |g, x| g / x)),
                Op::SoftmaxRow(a) => {
                    let (r, c) = y.shape();
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        let dot: f64 = y.row(i).iter().zip(dy.row(i)).map(|(p, g)| p * g).sum();
                        for j in 0..c {
                            dx.set(i, j, y.get(i, j) * (dy.get(i, j) - dot));
                        }
                    }
                    send(*a, dx);
                }
                Op::LogSoftmaxRow(a, mask) => {
                    let (r, c) = y.shape();
                    let live = |i: usize, j: usize| mask.as_ref().is_none_or(|m| !m[i * c + j]);
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        let total: f64 = (0..c).filter(|&j| live(i, j)).map(|j| dy.get(i, j)).sum();
                        for j in (0..c).filter(|&j| live(i, j)) {
                            dx.set(i, j, dy.get(i, j) - y.get(i, j).exp() * total);
                        }
                    }
                    send(*a, dx);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    send(*a, Tensor::full(r, c, dy.item()));
                }
                Op::SumAxis(a, axis) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            let g = match axis {
                                Axis::Row => dy.get(i, 0),
                                Axis::Col => dy.get(0, j),
                            };
                            dx.set(i, j, g);
                        }
                    }
                    send(*a, dx);
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape(*a);
                    send(*a, Tensor::full(r, c, dy.item() / (r * c) as f64));
                }
                Op::MinConst(a, k) => {
                    send(*a, dy.zip_map(self.value(*a), |g, x| if x < *k { g } else { 0.0 }));
                }
                Op::Clamp(a, lo, hi) => {
                    send(*a, dy.zip_map(self.value(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let mut g = Vec::with_capacity(r * c);
                        for i in 0..r {
                            g.extend_from_slice(&dy.row(i)[offset..offset + c]);
                        }
                        offset += c;
                        send(p, Tensor::from_vec(r, c, g));
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let g = dy.data()[offset * c..(offset + r) * c].to_vec();
                        offset += r;
                        send(p, Tensor::from_vec(r, c, g));
                    }
                }
                Op::GatherRows(a, rows) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Tensor::zeros(r, c);
                    for (j, &src) in rows.iter().enumerate() {
                        for col in 0..c {
                            dx.set(src, col, dx.get(src, col) + dy.get(j, col));
                        }
                    }
                    send(*a, dx);
                }
                Op::SliceCols(a, start, len) => {
                    let (r, c) = self.shape(*a);
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..*len {
                            dx.set(i, start + j, dy.get(i, j));
                        }
                    }
                    send(*a, dx);
                }
                Op::Transpose(a) => send(*a, dy.transpose()),
                Op::RepeatRows(a) => {
                    let c = dy.cols();
                    let mut row = vec![0.0; c];
                    for (j, g) in dy.data().iter().enumerate() {
                        row[j % c] += g;
                    }
                    send(*a, Tensor::row_vector(row));
                }
            }
        }
        Ok(out)
    }

    /// Back-propagates `loss` and accumulates the gradients of every
    /// parameter of `store` that the loss reaches.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.gradients(loss)?.accumulate_into(store);
        Ok(())
    }
}

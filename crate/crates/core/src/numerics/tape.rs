//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every op in append order, so inputs always precede the
//! node that consumes them and a single reverse sweep visits each node once.
//! Leaf values may borrow their storage (parameters are not copied onto the
//! tape), which is why the tape carries the lifetime of the borrowed tensors.

use std::borrow::Cow;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op kinds reachable through the generic [`Tape::forward_op`] entry point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Sub,
    Scale(f64),
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    Softmax,
    L2Norm,
    Concat,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    MeanRows(Var),
    Softmax(Var),
    LogSumExp(Var),
    L2Norm(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    PickRows(Vec<(Var, usize)>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients of a scalar root with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visits: Vec<u32>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// How many times the reverse sweep processed each node.
    pub fn visits(&self) -> &[u32] {
        &self.visits
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `c = a * b + beta * c` for row-major slices with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output buffer too small");
    // SAFETY: the caller guarantees that the strided views fit in the slices;
    // every call site below passes dense row-major (or transposed) layouts of
    // exactly the stated dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn shape_err(op: &'static str, tensors: &[&Tensor]) -> Error {
    Error::Shape {
        op,
        shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("internal op produced a consistent shape")
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.value(var).data()[0]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// A trainable leaf that borrows its storage.
    pub fn param(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Copy of `var`'s value that stops gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    /// Generic dispatcher over the documented op kinds.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Mul | OpKind::Sub => 2,
            OpKind::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
        Ok(match kind {
            OpKind::MatMul => self.matmul(inputs[0], inputs[1])?,
            OpKind::Add => self.add(inputs[0], inputs[1])?,
            OpKind::Mul => self.mul(inputs[0], inputs[1])?,
            OpKind::Sub => self.sub(inputs[0], inputs[1])?,
            OpKind::Scale(k) => self.scale(inputs[0], k),
            OpKind::Tanh => self.tanh(inputs[0]),
            OpKind::Sigmoid => self.sigmoid(inputs[0]),
            OpKind::Relu => self.relu(inputs[0]),
            OpKind::Exp => self.exp(inputs[0]),
            OpKind::Log => self.log(inputs[0]),
            OpKind::Sum => self.sum(inputs[0]),
            OpKind::Mean => self.mean(inputs[0]),
            OpKind::Softmax => self.softmax(inputs[0]),
            OpKind::L2Norm => self.l2_norm(inputs[0]),
            OpKind::Concat => self.concat(inputs)?,
        })
    }

    // ── binary ops ────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", &[ta, tb]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            k as isize,
            1,
            tb.data(),
            n as isize,
            1,
            0.0,
            &mut out,
        );
        Ok(self.push_op(mat(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        self.push_op(mat(c, r, out), Op::Transpose(a), &[a])
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() != tb.numel() || ta.cols() != tb.cols() {
            return Err(shape_err(name, &[ta, tb]));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push_op(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("minimum", a, b, Op::Minimum(a, b), f64::min)
    }

    /// `[r, c] + [1, c]`, broadcasting the row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        if tr.numel() != c {
            return Err(shape_err("add_row", &[ta, tr]));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            for (x, b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let value = mat(ta.rows(), c, data);
        Ok(self.push_op(value, Op::AddRow(a, row), &[a, row]))
    }

    /// `[r, c] * [1, c]`, broadcasting the row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        if tr.numel() != c {
            return Err(shape_err("mul_row", &[ta, tr]));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            for (x, b) in chunk.iter_mut().zip(tr.data()) {
                *x *= b;
            }
        }
        let value = mat(ta.rows(), c, data);
        Ok(self.push_op(value, Op::MulRow(a, row), &[a, row]))
    }

    /// `[r, c] * [r, 1]`, broadcasting the column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        let (r, c) = (ta.rows(), ta.cols());
        if tc.numel() != r {
            return Err(shape_err("mul_col", &[ta, tc]));
        }
        let mut data = ta.data().to_vec();
        for (i, chunk) in data.chunks_mut(c.max(1)).enumerate() {
            let s = tc.data()[i];
            for x in chunk.iter_mut() {
                *x *= s;
            }
        }
        Ok(self.push_op(mat(r, c, data), Op::MulCol(a, col), &[a, col]))
    }

    // ── unary ops ─────────────────────────────────────────────────────

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push_op(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Elementwise `max(x, floor)`.
    pub fn max_scalar(&mut self, a: Var, floor: f64) -> Var {
        self.clamp(a, floor, f64::INFINITY)
    }

    // ── reductions ────────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Per-row sum, `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let data = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        self.push_op(Tensor::column(data), Op::SumCols(a), &[a])
    }

    /// Per-column mean, `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; c];
        for row in t.data().chunks(c.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.push_op(Tensor::row(out), Op::MeanRows(a), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            data.extend(e.into_iter().map(|x| x / z));
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push_op(value, Op::Softmax(a), &[a])
    }

    /// Per-row log-sum-exp, `[r, c] -> [r, 1]`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let data = t.data().chunks(c).map(logsumexp_slice).collect();
        self.push_op(Tensor::column(data), Op::LogSumExp(a), &[a])
    }

    /// Per-row Euclidean norm, `[r, c] -> [r, 1]`.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols().max(1);
        let data = t
            .data()
            .chunks(c)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.push_op(Tensor::column(data), Op::L2Norm(a), &[a])
    }

    // ── structural ops ────────────────────────────────────────────────

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Empty("concat inputs"));
        };
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            let shapes: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
            return Err(shape_err("concat", &shapes));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        Ok(self.push_op(mat(rows, total, data), Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(shape_err("slice_cols", &[t]));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        Ok(self.push_op(mat(rows, end - start, data), Op::SliceCols(a, start, end), &[a]))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if rows.iter().any(|&r| r >= t.rows()) {
            return Err(shape_err("gather_rows", &[t]));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row_slice(r));
        }
        Ok(self.push_op(mat(rows.len(), c, data), Op::GatherRows(a, rows.to_vec()), &[a]))
    }

    /// Stacks one row from each `(var, row)` pair; all sources share a width.
    pub fn pick_rows(&mut self, picks: &[(Var, usize)]) -> Result<Var> {
        let Some(&(first, _)) = picks.first() else {
            return Err(Error::Empty("pick_rows sources"));
        };
        let c = self.value(first).cols();
        let mut data = Vec::with_capacity(picks.len() * c);
        for &(v, r) in picks {
            let t = self.value(v);
            if t.cols() != c || r >= t.rows() {
                return Err(shape_err("pick_rows", &[self.value(first), t]));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let inputs: Vec<Var> = picks.iter().map(|p| p.0).collect();
        Ok(self.push_op(mat(picks.len(), c, data), Op::PickRows(picks.to_vec()), &inputs))
    }

    // ── reverse sweep ─────────────────────────────────────────────────

    /// Gradients of the scalar `root` with respect to all leaves.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut visits = vec![0u32; n];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visits[i] += 1;
            self.backprop_node(i, &g, &mut grads);
        }
        // Leaves keep their gradient; account for their single visit.
        for (i, node) in self.nodes[..n].iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_some() {
                visits[i] += 1;
            }
        }
        Ok(Gradients { grads, visits })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &*node.value;
        let val = |v: Var| &*self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    let ga = grad_buf(grads, *a, ta);
                    // dA = dC · Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        n as isize,
                        1,
                        tb.data(),
                        1,
                        n as isize,
                        1.0,
                        ga.data_mut(),
                    );
                }
                if needs(*b) {
                    let gb = grad_buf(grads, *b, tb);
                    // dB = Aᵀ · dC
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        1.0,
                        gb.data_mut(),
                    );
                }
            }
            Op::Transpose(a) => {
                let ta = val(*a);
                let (r, c) = (ta.rows(), ta.cols());
                let ga = grad_buf(grads, *a, ta).data_mut();
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g.data()[j * r + i];
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, val(*a), needs(*a), |buf| add_into(buf, g.data()));
                accumulate(grads, *b, val(*b), needs(*b), |buf| add_into(buf, g.data()));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, val(*a), needs(*a), |buf| add_into(buf, g.data()));
                accumulate(grads, *b, val(*b), needs(*b), |buf| {
                    for (o, x) in buf.iter_mut().zip(g.data()) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                accumulate(grads, *a, ta, needs(*a), |buf| {
                    for ((o, x), w) in buf.iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += x * w;
                    }
                });
                accumulate(grads, *b, tb, needs(*b), |buf| {
                    for ((o, x), w) in buf.iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += x * w;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                accumulate(grads, *a, ta, needs(*a), |buf| {
                    for (j, o) in buf.iter_mut().enumerate() {
                        if ta.data()[j] <= tb.data()[j] {
                            *o += g.data()[j];
                        }
                    }
                });
                accumulate(grads, *b, tb, needs(*b), |buf| {
                    for (j, o) in buf.iter_mut().enumerate() {
                        if ta.data()[j] > tb.data()[j] {
                            *o += g.data()[j];
                        }
                    }
                });
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, val(*a), needs(*a), |buf| add_into(buf, g.data()));
                let tr = val(*row);
                let c = tr.numel().max(1);
                accumulate(grads, *row, tr, needs(*row), |buf| {
                    for chunk in g.data().chunks(c) {
                        add_into(buf, chunk);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                let c = tr.numel().max(1);
                accumulate(grads, *a, ta, needs(*a), |buf| {
                    for (bc, gc) in buf.chunks_mut(c).zip(g.data().chunks(c)) {
                        for ((o, x), w) in bc.iter_mut().zip(gc).zip(tr.data()) {
                            *o += x * w;
                        }
                    }
                });
                accumulate(grads, *row, tr, needs(*row), |buf| {
                    for (ac, gc) in ta.data().chunks(c).zip(g.data().chunks(c)) {
                        for ((o, x), w) in buf.iter_mut().zip(gc).zip(ac) {
                            *o += x * w;
                        }
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                let c = ta.cols().max(1);
                accumulate(grads, *a, ta, needs(*a), |buf| {
                    for (r, (bc, gc)) in buf.chunks_mut(c).zip(g.data().chunks(c)).enumerate() {
                        let s = tc.data()[r];
                        for (o, x) in bc.iter_mut().zip(gc) {
                            *o += x * s;
                        }
                    }
                });
                accumulate(grads, *col, tc, needs(*col), |buf| {
                    for (r, (ac, gc)) in ta.data().chunks(c).zip(g.data().chunks(c)).enumerate() {
                        buf[r] += ac.iter().zip(gc).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
            }
            Op::Scale(a, k) => {
                accumulate(grads, *a, val(*a), true, |buf| {
                    for (o, x) in buf.iter_mut().zip(g.data()) {
                        *o += k * x;
                    }
                });
            }
            Op::AddScalar(a) => {
                accumulate(grads, *a, val(*a), true, |buf| add_into(buf, g.data()));
            }
            Op::Tanh(a) => elementwise(grads, *a, val(*a), g, |_, yv| 1.0 - yv * yv, y),
            Op::Sigmoid(a) => elementwise(grads, *a, val(*a), g, |_, yv| yv * (1.0 - yv), y),
            Op::Relu(a) => elementwise(grads, *a, val(*a), g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, y),
            Op::Exp(a) => elementwise(grads, *a, val(*a), g, |_, yv| yv, y),
            Op::Log(a) => elementwise(grads, *a, val(*a), g, |x, _| 1.0 / x, y),
            Op::Softplus(a) => elementwise(grads, *a, val(*a), g, |x, _| sigmoid(x), y),
            Op::Square(a) => elementwise(grads, *a, val(*a), g, |x, _| 2.0 * x, y),
            Op::Recip(a) => elementwise(grads, *a, val(*a), g, |_, yv| -yv * yv, y),
            Op::Clamp(a, lo, hi) => elementwise(
                grads,
                *a,
                val(*a),
                g,
                |x, _| if x >= *lo && x <= *hi { 1.0 } else { 0.0 },
                y,
            ),
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, val(*a), true, |buf| buf.iter_mut().for_each(|o| *o += s));
            }
            Op::Mean(a) => {
                let ta = val(*a);
                let s = g.data()[0] / ta.numel() as f64;
                accumulate(grads, *a, ta, true, |buf| buf.iter_mut().for_each(|o| *o += s));
            }
            Op::SumCols(a) => {
                let ta = val(*a);
                let c = ta.cols().max(1);
                accumulate(grads, *a, ta, true, |buf| {
                    for (r, chunk) in buf.chunks_mut(c).enumerate() {
                        let s = g.data()[r];
                        chunk.iter_mut().for_each(|o| *o += s);
                    }
                });
            }
            Op::MeanRows(a) => {
                let ta = val(*a);
                let (r, c) = (ta.rows() as f64, ta.cols().max(1));
                accumulate(grads, *a, ta, true, |buf| {
                    for chunk in buf.chunks_mut(c) {
                        for (o, x) in chunk.iter_mut().zip(g.data()) {
                            *o += x / r;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let ta = val(*a);
                let c = ta.cols().max(1);
                accumulate(grads, *a, ta, true, |buf| {
                    for ((bc, gc), yc) in buf.chunks_mut(c).zip(g.data().chunks(c)).zip(y.data().chunks(c)) {
                        let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in bc.iter_mut().zip(gc).zip(yc) {
                            *o += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LogSumExp(a) => {
                let ta = val(*a);
                let c = ta.cols().max(1);
                accumulate(grads, *a, ta, true, |buf| {
                    for (r, (bc, xc)) in buf.chunks_mut(c).zip(ta.data().chunks(c)).enumerate() {
                        let lse = y.data()[r];
                        let gr = g.data()[r];
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        for (o, x) in bc.iter_mut().zip(xc) {
                            *o += gr * (x - lse).exp();
                        }
                    }
                });
            }
            Op::L2Norm(a) => {
                let ta = val(*a);
                let c = ta.cols().max(1);
                accumulate(grads, *a, ta, true, |buf| {
                    for (r, (bc, xc)) in buf.chunks_mut(c).zip(ta.data().chunks(c)).enumerate() {
                        let norm = y.data()[r];
                        if norm > 0.0 {
                            let s = g.data()[r] / norm;
                            for (o, x) in bc.iter_mut().zip(xc) {
                                *o += s * x;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for p in parts {
                    let tp = val(*p);
                    let w = tp.cols();
                    if needs(*p) {
                        let buf = grad_buf(grads, *p, tp).data_mut();
                        for r in 0..tp.rows() {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            add_into(&mut buf[r * w..(r + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let ta = val(*a);
                let (c, w) = (ta.cols(), end - start);
                accumulate(grads, *a, ta, true, |buf| {
                    for r in 0..ta.rows() {
                        add_into(&mut buf[r * c + start..r * c + end], &g.data()[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::GatherRows(a, rows) => {
                let ta = val(*a);
                let c = ta.cols();
                accumulate(grads, *a, ta, true, |buf| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut buf[r * c..(r + 1) * c], &g.data()[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::PickRows(picks) => {
                let c = y.cols();
                for (i, &(v, r)) in picks.iter().enumerate() {
                    if !needs(v) {
                        continue;
                    }
                    let buf = grad_buf(grads, v, val(v)).data_mut();
                    add_into(&mut buf[r * c..(r + 1) * c], &g.data()[i * c..(i + 1) * c]);
                }
            }
        }
    }
}

pub(crate) fn logsumexp_slice(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

fn grad_buf<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros_like(like))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, like: &Tensor, needed: bool, f: impl FnOnce(&mut [f64])) {
    if needed {
        f(grad_buf(grads, v, like).data_mut());
    }
}

/// `dA += dC * d(x, y)` where `d` sees the input and output values.
fn elementwise(grads: &mut [Option<Tensor>], a: Var, ta: &Tensor, g: &Tensor, d: impl Fn(f64, f64) -> f64, y: &Tensor) {
    let buf = grad_buf(grads, a, ta).data_mut();
    for (((o, gv), x), yv) in buf.iter_mut().zip(g.data()).zip(ta.data()).zip(y.data()) {
        *o += gv * d(*x, *yv);
    }
}

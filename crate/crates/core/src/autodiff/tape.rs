//! Define-by-run tape with reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Node ids grow
//! monotonically, so the node vector is already in topological order and the
//! backward pass is a single reverse sweep. Gradients accumulate additively
//! into leaves; call [`Tape::zero_grad`] to reset them.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::autodiff::{Csr, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Lu;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Neg,
    Scale(f64),
    Shift(f64),
    Square,
    /// Clamp to `[lo, hi]`; gradient passes only through the open interior.
    Clamp(f64, f64),
}

impl UnaryOp {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            UnaryOp::Neg => -x,
            UnaryOp::Scale(c) => c * x,
            UnaryOp::Shift(c) => x + c,
            UnaryOp::Square => x * x,
            UnaryOp::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Exp => y,
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            UnaryOp::Neg => -1.0,
            UnaryOp::Scale(c) => c,
            UnaryOp::Shift(_) => 1.0,
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Clamp(lo, hi) => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMatMul(Arc<Csr>, usize),
    Binary(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    MulConst(Rc<Tensor>, usize),
    RowSoftmax(usize),
    LogSumExpRows(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    SliceCols { src: usize, start: usize },
    SliceRows { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    GatherRows { src: usize, idx: Rc<Vec<usize>> },
    ScatterDense {
        src: usize,
        pos: Rc<Vec<(usize, usize)>>,
    },
    SegmentSoftmax { src: usize, seg: Rc<Vec<usize>> },
    LogAbsDet { src: usize, inv_t: Option<Tensor> },
    Transpose(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient during [`Var::backward`].
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Resets every accumulated leaf gradient to zero.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// `A·x` for a constant sparse `A`.
    pub fn spmm<'t>(&'t self, a: &Arc<Csr>, x: Var<'t>) -> Result<Var<'t>> {
        let value = a.matmul(&x.value())?;
        let rg = x.requires_grad();
        Ok(self.push(value, Op::SpMatMul(Arc::clone(a), x.id), rg))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(Rc::as_ref).collect();
        let value = Tensor::concat_cols(&refs)?;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg))
    }

    /// Runs the reverse sweep from `output`, accumulating into leaf gradients.
    fn backward_from(&self, output: usize) -> Result<()> {
        let mut adj: Vec<Option<Tensor>> = Vec::new();
        adj.resize_with(output + 1, || None);
        adj[output] = Some(Tensor::scalar(1.0));
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            for id in (0..=output).rev() {
                let Some(g) = adj[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                let mut send = |to: usize, grad: Tensor| -> Result<()> {
                    if !nodes[to].requires_grad {
                        return Ok(());
                    }
                    match &mut adj[to] {
                        Some(acc) => acc.add_assign(&grad),
                        slot => {
                            *slot = Some(grad);
                            Ok(())
                        }
                    }
                };
                let val = |i: usize| -> &Tensor { &nodes[i].value };
                match &node.op {
                    Op::Leaf => leaf_grads.push((id, g)),
                    Op::MatMul(a, b) => {
                        if nodes[*a].requires_grad {
                            send(*a, g.matmul_t(val(*b))?)?;
                        }
                        if nodes[*b].requires_grad {
                            send(*b, val(*a).t_matmul(&g)?)?;
                        }
                    }
                    Op::SpMatMul(csr, x) => send(*x, csr.t_matmul(&g)?)?,
                    Op::Binary(op, a, b) => {
                        let (av, bv) = (val(*a), val(*b));
                        let [r, c] = g.shape();
                        let (ga, gb) = binary_grads(*op, &g, av, bv, r, c);
                        if nodes[*a].requires_grad {
                            send(*a, reduce_to(&ga, av.shape()))?;
                        }
                        if nodes[*b].requires_grad {
                            send(*b, reduce_to(&gb, bv.shape()))?;
                        }
                    }
                    Op::Unary(op, x) => {
                        let (xv, yv) = (val(*x), &node.value);
                        let data = g
                            .data()
                            .iter()
                            .zip(xv.data().iter().zip(yv.data()))
                            .map(|(&gi, (&xi, &yi))| gi * op.derivative(xi, yi))
                            .collect();
                        send(*x, Tensor::new(g.rows(), g.cols(), data)?)?;
                    }
                    Op::MulConst(mask, x) => send(*x, g.zip_map(mask, |a, b| a * b)?)?,
                    Op::RowSoftmax(x) => {
                        let y = &node.value;
                        let mut gx = Tensor::zeros(y.rows(), y.cols());
                        for i in 0..y.rows() {
                            let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                            for j in 0..y.cols() {
                                gx.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                            }
                        }
                        send(*x, gx)?;
                    }
                    Op::LogSumExpRows(x) => {
                        let xv = val(*x);
                        let lse = &node.value;
                        let gx = Tensor::from_fn(xv.rows(), xv.cols(), |i, j| {
                            g.get(i, 0) * (xv.get(i, j) - lse.get(i, 0)).exp()
                        });
                        send(*x, gx)?;
                    }
                    Op::Sum(x) => {
                        let [r, c] = val(*x).shape();
                        send(*x, Tensor::full(r, c, g.data()[0]))?;
                    }
                    Op::Mean(x) => {
                        let [r, c] = val(*x).shape();
                        send(*x, Tensor::full(r, c, g.data()[0] / (r * c) as f64))?;
                    }
                    Op::SumRows(x) => {
                        let [r, c] = val(*x).shape();
                        send(*x, Tensor::from_fn(r, c, |i, _| g.get(i, 0)))?;
                    }
                    Op::SumCols(x) => {
                        let [r, c] = val(*x).shape();
                        send(*x, Tensor::from_fn(r, c, |_, j| g.get(0, j)))?;
                    }
                    Op::SliceCols { src, start } => {
                        let [r, c] = val(*src).shape();
                        let w = g.cols();
                        let gx = Tensor::from_fn(r, c, |i, j| {
                            if j >= *start && j < start + w {
                                g.get(i, j - start)
                            } else {
                                0.0
                            }
                        });
                        send(*src, gx)?;
                    }
                    Op::SliceRows { src, start } => {
                        let [r, c] = val(*src).shape();
                        let h = g.rows();
                        let gx = Tensor::from_fn(r, c, |i, j| {
                            if i >= *start && i < start + h {
                                g.get(i - start, j)
                            } else {
                                0.0
                            }
                        });
                        send(*src, gx)?;
                    }
                    Op::ConcatCols(parts) => {
                        let mut offset = 0;
                        for &p in parts {
                            let w = val(p).cols();
                            if nodes[p].requires_grad {
                                send(p, g.slice_cols(offset, offset + w)?)?;
                            }
                            offset += w;
                        }
                    }
                    Op::GatherRows { src, idx } => {
                        let [r, c] = val(*src).shape();
                        let mut gx = Tensor::zeros(r, c);
                        for (k, &i) in idx.iter().enumerate() {
                            for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                                *o += v;
                            }
                        }
                        send(*src, gx)?;
                    }
                    Op::ScatterDense { src, pos } => {
                        let data = pos.iter().map(|&(i, j)| g.get(i, j)).collect();
                        send(*src, Tensor::new(pos.len(), 1, data)?)?;
                    }
                    Op::SegmentSoftmax { src, seg } => {
                        let y = &node.value;
                        let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
                        let mut dots = vec![0.0; nseg];
                        for (e, &s) in seg.iter().enumerate() {
                            dots[s] += g.data()[e] * y.data()[e];
                        }
                        let data = seg
                            .iter()
                            .enumerate()
                            .map(|(e, &s)| y.data()[e] * (g.data()[e] - dots[s]))
                            .collect();
                        send(*src, Tensor::new(seg.len(), 1, data)?)?;
                    }
                    Op::LogAbsDet { src, inv_t } => {
                        let inv_t = inv_t
                            .as_ref()
                            .expect("inverse is cached whenever the input requires grad");
                        let s = g.data()[0];
                        send(*src, inv_t.map(|v| s * v))?;
                    }
                    Op::Transpose(x) => send(*x, g.transpose())?,
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn bget(t: &Tensor, i: usize, j: usize) -> f64 {
    let ii = if t.rows() == 1 { 0 } else { i };
    let jj = if t.cols() == 1 { 0 } else { j };
    t.get(ii, jj)
}

fn binary_grads(op: BinaryOp, g: &Tensor, a: &Tensor, b: &Tensor, r: usize, c: usize) -> (Tensor, Tensor) {
    match op {
        BinaryOp::Add => (g.clone(), g.clone()),
        BinaryOp::Sub => (g.clone(), g.map(|v| -v)),
        BinaryOp::Mul => (
            Tensor::from_fn(r, c, |i, j| g.get(i, j) * bget(b, i, j)),
            Tensor::from_fn(r, c, |i, j| g.get(i, j) * bget(a, i, j)),
        ),
        BinaryOp::Div => (
            Tensor::from_fn(r, c, |i, j| g.get(i, j) / bget(b, i, j)),
            Tensor::from_fn(r, c, |i, j| {
                let bv = bget(b, i, j);
                -g.get(i, j) * bget(a, i, j) / (bv * bv)
            }),
        ),
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let ii = if shape[0] == 1 { 0 } else { i };
            let jj = if shape[1] == 1 { 0 } else { j };
            let cur = out.get(ii, jj);
            out.set(ii, jj, cur + g.get(i, j));
        }
    }
    out
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a scalar variable.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// Accumulated gradient; zeros if nothing has been accumulated yet.
    pub fn grad(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()))
    }

    /// Reverse sweep from this scalar, adding `d self / d leaf` into every
    /// gradient-requiring leaf.
    pub fn backward(&self) -> Result<()> {
        let shape = self.shape();
        if shape != [1, 1] {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, found {shape:?}"
            )));
        }
        self.tape.backward_from(self.id)
    }

    fn derived(&self, value: Tensor, op: Op, inputs: &[Var<'t>]) -> Var<'t> {
        let rg = inputs.iter().any(Var::requires_grad);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.value().matmul(&other.value())?;
        Ok(self.derived(value, Op::MatMul(self.id, other.id), &[*self, other]))
    }

    fn binary(&self, op: BinaryOp, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let [r, c] = broadcast_shape(a.shape(), b.shape())?;
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
            BinaryOp::Div => |x: f64, y: f64| x / y,
        };
        let value = Tensor::from_fn(r, c, |i, j| f(bget(&a, i, j), bget(&b, i, j)));
        Ok(self.derived(value, Op::Binary(op, self.id, other.id), &[*self, other]))
    }

    /// Elementwise sum with row/column broadcasting of `1`-sized dimensions.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Var<'t> {
        let value = self.value().map(|x| op.apply(x));
        self.derived(value, Op::Unary(op, self.id), &[*self])
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(UnaryOp::Exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let v = self.value();
        if let Some(bad) = v.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(UnaryOp::Log))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(UnaryOp::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(UnaryOp::LeakyRelu(slope))
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(UnaryOp::Neg)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(UnaryOp::Scale(c))
    }

    pub fn shift(&self, c: f64) -> Var<'t> {
        self.unary(UnaryOp::Shift(c))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(UnaryOp::Square)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(UnaryOp::Clamp(lo, hi))
    }

    /// Elementwise product with a constant tensor of the same shape (dropout masks).
    pub fn mul_const(&self, mask: Rc<Tensor>) -> Result<Var<'t>> {
        let value = self.value().zip_map(&mask, |a, b| a * b)?;
        Ok(self.derived(value, Op::MulConst(mask, self.id), &[*self]))
    }

    /// Softmax across each row, stabilized by subtracting the row maximum.
    pub fn row_softmax(&self) -> Var<'t> {
        let x = self.value();
        let mut y = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (o, e) in y.row_mut(i).iter_mut().zip(exps) {
                *o = e / z;
            }
        }
        self.derived(y, Op::RowSoftmax(self.id), &[*self])
    }

    /// `log Σ_j exp(x_ij)` per row, giving an `m x 1` column.
    pub fn logsumexp_rows(&self) -> Var<'t> {
        let x = self.value();
        let data = (0..x.rows()).map(|i| logsumexp(x.row(i))).collect();
        self.derived(Tensor::column(data), Op::LogSumExpRows(self.id), &[*self])
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.derived(Tensor::scalar(s), Op::Sum(self.id), &[*self])
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let m = v.sum() / v.len() as f64;
        Ok(self.derived(Tensor::scalar(m), Op::Mean(self.id), &[*self]))
    }

    /// Sum across columns: `m x n -> m x 1`.
    pub fn sum_rows(&self) -> Var<'t> {
        let x = self.value();
        let data = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        self.derived(Tensor::column(data), Op::SumRows(self.id), &[*self])
    }

    /// Sum down rows: `m x n -> 1 x n`.
    pub fn sum_cols(&self) -> Var<'t> {
        let x = self.value();
        let mut data = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (d, v) in data.iter_mut().zip(x.row(i)) {
                *d += v;
            }
        }
        self.derived(Tensor::row_vector(data), Op::SumCols(self.id), &[*self])
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.value().slice_cols(start, end)?;
        Ok(self.derived(value, Op::SliceCols { src: self.id, start }, &[*self]))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        if start > end || end > x.rows() {
            return Err(Error::Shape(format!("row slice {start}..{end} of {}", x.rows())));
        }
        let idx: Vec<usize> = (start..end).collect();
        let value = x.select_rows(&idx)?;
        Ok(self.derived(value, Op::SliceRows { src: self.id, start }, &[*self]))
    }

    /// Rows picked by index (repeats allowed).
    pub fn gather_rows(&self, idx: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.value().select_rows(&idx)?;
        Ok(self.derived(value, Op::GatherRows { src: self.id, idx }, &[*self]))
    }

    /// Places the entries of an `m x 1` column at distinct positions of an
    /// `n x n` zero matrix.
    pub fn scatter_dense(&self, pos: Rc<Vec<(usize, usize)>>, n: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.cols() != 1 || v.rows() != pos.len() {
            return Err(Error::Shape(format!(
                "scatter of {:?} into {} positions",
                v.shape(),
                pos.len()
            )));
        }
        let mut out = Tensor::zeros(n, n);
        for (&(i, j), &x) in pos.iter().zip(v.data()) {
            if i >= n || j >= n {
                return Err(Error::Shape(format!("scatter position ({i},{j}) outside {n}x{n}")));
            }
            out.set(i, j, x);
        }
        Ok(self.derived(out, Op::ScatterDense { src: self.id, pos }, &[*self]))
    }

    /// Softmax of an `m x 1` column within groups sharing a segment id.
    pub fn segment_softmax(&self, seg: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.value();
        if v.cols() != 1 || v.rows() != seg.len() {
            return Err(Error::Shape("segment softmax expects one segment id per row".into()));
        }
        let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; nseg];
        for (&s, &x) in seg.iter().zip(v.data()) {
            max[s] = max[s].max(x);
        }
        let exps: Vec<f64> = seg.iter().zip(v.data()).map(|(&s, &x)| (x - max[s]).exp()).collect();
        let mut z = vec![0.0; nseg];
        for (&s, &e) in seg.iter().zip(&exps) {
            z[s] += e;
        }
        let data = seg.iter().zip(exps).map(|(&s, e)| e / z[s]).collect();
        Ok(self.derived(
            Tensor::column(data),
            Op::SegmentSoftmax { src: self.id, seg },
            &[*self],
        ))
    }

    /// `log|det A|` of a square matrix; the backward rule is `g · A⁻ᵀ`.
    pub fn log_abs_det(&self) -> Result<Var<'t>> {
        let a = self.value();
        let lu = Lu::factor(&a)?;
        let inv_t = self.requires_grad().then(|| lu.inverse().transpose());
        Ok(self.derived(
            Tensor::scalar(lu.log_abs_det()),
            Op::LogAbsDet { src: self.id, inv_t },
            &[*self],
        ))
    }

    pub fn transpose(&self) -> Var<'t> {
        let value = self.value().transpose();
        self.derived(value, Op::Transpose(self.id), &[*self])
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

//! Reverse-mode tape over matrix-valued nodes.
//!
//! Every backward rule is expressed with the same primitives used in the
//! forward pass, so the gradient of a node is itself a node on the tape.
//! Calling [`Tape::grad`] and then differentiating a function of the result
//! gives second derivatives (double backward); [`Tape::gradients`] and
//! [`Tape::param_grad`] discard the recorded backward pass afterwards.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Mul, Neg, Sub};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    /// `1 - y^2` for `y = tanh(x)`.
    TanhDeriv,
    Sigmoid,
    /// `y (1 - y)` for `y = sigmoid(x)`.
    SigmoidDeriv,
    Softplus,
    Relu,
    Step,
    Abs,
    Sign,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    /// `0.5 / y`, zero where `y == 0`; used by the [`Unary::Sqrt`] rule.
    HalfRecip,
    Recip,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::TanhDeriv => "tanh_deriv",
            Unary::Sigmoid => "sigmoid",
            Unary::SigmoidDeriv => "sigmoid_deriv",
            Unary::Softplus => "softplus",
            Unary::Relu => "relu",
            Unary::Step => "step",
            Unary::Abs => "abs",
            Unary::Sign => "sign",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Sqrt => "sqrt",
            Unary::HalfRecip => "half_recip",
            Unary::Recip => "recip",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::TanhDeriv => 1.0 - x * x,
            Unary::Sigmoid => sigmoid(x),
            Unary::SigmoidDeriv => x * (1.0 - x),
            Unary::Softplus => softplus(x),
            Unary::Relu => x.max(0.0),
            Unary::Step => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Abs => x.abs(),
            Unary::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Sqrt => x.max(0.0).sqrt(),
            Unary::HalfRecip => {
                if x == 0.0 {
                    0.0
                } else {
                    0.5 / x
                }
            }
            Unary::Recip => 1.0 / x,
        }
    }

    /// Piecewise-constant functions cut the graph.
    fn is_locally_constant(self) -> bool {
        matches!(self, Unary::Step | Unary::Sign)
    }
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Transpose(usize),
    Expand(usize),
    ReduceTo(usize),
    Unary(usize, Unary),
    SliceCols {
        a: usize,
        start: usize,
    },
    PadCols {
        a: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Transpose(a)
            | Op::Expand(a)
            | Op::ReduceTo(a)
            | Op::Unary(a, _)
            | Op::SliceCols { a, .. }
            | Op::PadCols { a, .. } => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Expand(_) => "expand",
            Op::ReduceTo(_) => "reduce",
            Op::Unary(_, u) => u.name(),
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::ConcatCols(_) => "concat_cols",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording structure for one forward/backward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<usize>>,
    poison: Cell<Option<(&'static str, usize)>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.dims())
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

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.poison.get().is_none() && !value.is_finite() {
            self.poison.set(Some((op.name(), id)));
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Trainable leaf, registered for [`Tape::param_grad`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let v = self.push(value, Op::Leaf, true);
        self.params.borrow_mut().push(v.id);
        v
    }

    /// Differentiable leaf that is not a registered parameter.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn param_count(&self) -> usize {
        self.params.borrow().len()
    }

    /// Errors if any recorded value is NaN or infinite.
    pub fn check(&self) -> Result<()> {
        match self.poison.get() {
            Some((op, node)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn value_dims(&self, id: usize) -> (usize, usize) {
        self.nodes.borrow()[id].value.dims()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of a scalar `output` with respect to `wrt`, recorded on the
    /// tape so they can be differentiated again.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let shape = output.dims();
        if shape != (1, 1) {
            return Err(Error::NonScalar(vec![shape.0, shape.1]));
        }
        self.check()?;
        let n = output.id + 1;
        let lo = wrt.iter().map(|w| w.id).min().unwrap_or(n).min(n);
        // Only nodes downstream of some `wrt` carry useful adjoints.
        let mut live = vec![false; n - lo];
        for w in wrt {
            if w.id < n {
                live[w.id - lo] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in lo..n {
                if !live[i - lo] && nodes[i].requires_grad {
                    live[i - lo] = nodes[i].op.inputs().iter().any(|&p| p >= lo && live[p - lo]);
                }
            }
        }
        let requires = |id: usize| id >= lo && live[id - lo];
        let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
        if requires(output.id) {
            grads[output.id] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (lo..n).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            if !op.inputs().iter().any(|&p| requires(p)) {
                continue;
            }
            let me = Var { tape: self, id: i };
            let mut acc = |p: usize, contrib: Var<'t>| {
                grads[p] = Some(match grads[p] {
                    Some(prev) => prev.add(contrib),
                    None => contrib,
                });
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if requires(a) {
                        acc(a, g);
                    }
                    if requires(b) {
                        acc(b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if requires(a) {
                        acc(a, g);
                    }
                    if requires(b) {
                        acc(b, g.neg());
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.var_at(a), self.var_at(b));
                    if requires(a) {
                        acc(a, g.mul(vb));
                    }
                    if requires(b) {
                        acc(b, g.mul(va));
                    }
                }
                Op::Neg(a) => acc(a, g.neg()),
                Op::Scale(a, s) => acc(a, g.scale(s)),
                Op::Offset(a) => acc(a, g),
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (self.var_at(a), self.var_at(b));
                    if requires(a) {
                        let ga = match (ta, tb) {
                            (false, false) => g.matmul_t(vb, false, true),
                            (false, true) => g.matmul_t(vb, false, false),
                            (true, false) => vb.matmul_t(g, false, true),
                            (true, true) => vb.matmul_t(g, true, true),
                        };
                        acc(a, ga);
                    }
                    if requires(b) {
                        let gb = match (ta, tb) {
                            (false, false) => va.matmul_t(g, true, false),
                            (false, true) => g.matmul_t(va, true, false),
                            (true, false) => va.matmul_t(g, false, false),
                            (true, true) => g.matmul_t(va, true, true),
                        };
                        acc(b, gb);
                    }
                }
                Op::Transpose(a) => acc(a, g.t()),
                Op::Expand(a) => {
                    let (r, c) = self.value_dims(a);
                    acc(a, g.reduce_to(r, c));
                }
                Op::ReduceTo(a) => {
                    let (r, c) = self.value_dims(a);
                    acc(a, g.expand(r, c));
                }
                Op::Unary(a, u) => {
                    let x = self.var_at(a);
                    let contrib = match u {
                        Unary::Tanh => g.mul(me.unary(Unary::TanhDeriv)),
                        Unary::TanhDeriv => g.mul(x).scale(-2.0),
                        Unary::Sigmoid => g.mul(me.unary(Unary::SigmoidDeriv)),
                        Unary::SigmoidDeriv => g.mul(x.scale(-2.0).offset(1.0)),
                        Unary::Softplus => g.mul(x.sigmoid()),
                        Unary::Relu => g.mul(x.unary(Unary::Step)),
                        Unary::Abs => g.mul(x.unary(Unary::Sign)),
                        Unary::Exp => g.mul(me),
                        Unary::Ln => g.mul(x.recip()),
                        Unary::Sin => g.mul(x.cos()),
                        Unary::Cos => g.mul(x.sin()).neg(),
                        Unary::Sqrt => g.mul(me.unary(Unary::HalfRecip)),
                        Unary::HalfRecip => g.mul(me.mul(me)).scale(-2.0),
                        Unary::Recip => g.mul(me.mul(me)).neg(),
                        Unary::Step | Unary::Sign => continue,
                    };
                    acc(a, contrib);
                }
                Op::SliceCols { a, start } => {
                    let (_, total) = self.value_dims(a);
                    acc(a, g.pad_cols(start, total));
                }
                Op::PadCols { a, start } => {
                    let (_, len) = self.value_dims(a);
                    acc(a, g.slice_cols(start, len));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (_, c) = self.value_dims(p);
                        if requires(p) {
                            acc(p, g.slice_cols(off, c));
                        }
                        off += c;
                    }
                }
            }
        }
        self.check()?;
        Ok(wrt
            .iter()
            .map(|w| {
                grads.get(w.id).copied().flatten().unwrap_or_else(|| {
                    let (r, c) = w.dims();
                    self.constant(Tensor::zeros(r, c))
                })
            })
            .collect())
    }

    fn var_at(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradient values of `output` with respect to `wrt`. The recorded
    /// backward pass is removed from the tape afterwards.
    pub fn gradients<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Tensor>> {
        let mark = self.len();
        let result = self.grad(output, wrt).map(|gs| gs.iter().map(Var::value).collect());
        self.truncate(mark);
        result
    }

    /// Gradients for every registered parameter, in registration order.
    /// Parameters that do not influence `output` get zeros.
    pub fn param_grad<'t>(&'t self, output: Var<'t>) -> Result<Vec<Tensor>> {
        let params: Vec<Var<'t>> = self
            .params
            .borrow()
            .iter()
            .map(|&id| Var { tape: self, id })
            .collect();
        self.gradients(output, &params)
    }

    fn truncate(&self, len: usize) {
        self.nodes.borrow_mut().truncate(len);
        if let Some((_, node)) = self.poison.get() {
            if node >= len {
                self.poison.set(None);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn item(&self) -> f64 {
        self.with_value(Tensor::item)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tape.value_dims(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(&Tensor, &Tensor) -> Tensor) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)
        };
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn unary_with(self, op: Op, f: impl Fn(&Tensor) -> Tensor) -> Var<'t> {
        let value = f(&self.tape.nodes.borrow()[self.id].value);
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn same_dims(&self, other: &Var<'t>, op: &'static str) {
        assert_eq!(
            self.dims(),
            other.dims(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.dims(),
            other.dims()
        );
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_dims(&other, "add");
        self.binary(other, Op::Add(self.id, other.id), Tensor::add)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_dims(&other, "sub");
        self.binary(other, Op::Sub(self.id, other.id), Tensor::sub)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_dims(&other, "mul");
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            a.zip_map(b, |x, y| x * y)
        })
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.mul(other.recip())
    }

    pub fn neg(self) -> Var<'t> {
        self.unary_with(Op::Neg(self.id), |t| t.map(|v| -v))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary_with(Op::Scale(self.id, s), |t| t.scale(s))
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary_with(Op::Offset(self.id), |t| t.map(|v| v + c))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_t(other, false, false)
    }

    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let (ar, ac) = self.dims();
        let (br, bc) = other.dims();
        let k1 = if ta { ar } else { ac };
        let k2 = if tb { bc } else { br };
        assert_eq!(k1, k2, "matmul: inner dimensions {:?} x {:?}", (ar, ac), (br, bc));
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            ta,
            tb,
        };
        self.binary(other, op, |a, b| Tensor::matmul_t(a, b, ta, tb))
    }

    pub fn t(self) -> Var<'t> {
        self.unary_with(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn expand(self, rows: usize, cols: usize) -> Var<'t> {
        if self.dims() == (rows, cols) {
            return self;
        }
        self.unary_with(Op::Expand(self.id), |t| t.expand(rows, cols))
    }

    pub fn reduce_to(self, rows: usize, cols: usize) -> Var<'t> {
        if self.dims() == (rows, cols) {
            return self;
        }
        self.unary_with(Op::ReduceTo(self.id), |t| t.reduce_to(rows, cols))
    }

    pub fn sum(self) -> Var<'t> {
        self.reduce_to(1, 1)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.with_value(Tensor::len) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums, `[1, cols]`.
    pub fn sum_rows(self) -> Var<'t> {
        let (_, c) = self.dims();
        self.reduce_to(1, c)
    }

    /// Row sums, `[rows, 1]`.
    pub fn sum_cols(self) -> Var<'t> {
        let (r, _) = self.dims();
        self.reduce_to(r, 1)
    }

    /// Adds a `[1, cols]` row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let (r, c) = self.dims();
        self.add(row.expand(r, c))
    }

    /// Multiplies every column by a `[rows, 1]` vector.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        let (r, c) = self.dims();
        self.mul(col.expand(r, c))
    }

    fn unary(self, u: Unary) -> Var<'t> {
        let value = self.tape.nodes.borrow()[self.id].value.map(|v| u.apply(v));
        let rg = self.requires_grad() && !u.is_locally_constant();
        self.tape.push(value, Op::Unary(self.id, u), rg)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu)
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Ln)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos)
    }

    /// Square root with derivative 0 at 0.
    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Unary::Recip)
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self)
    }

    /// Euclidean norm of each row, `[rows, 1]`.
    pub fn row_norms(self) -> Var<'t> {
        self.square().sum_cols().sqrt()
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let (_, c) = self.dims();
        assert!(start + len <= c, "slice_cols: {start}+{len} > {c}");
        if start == 0 && len == c {
            return self;
        }
        self.unary_with(Op::SliceCols { a: self.id, start }, |t| t.slice_cols(start, len))
    }

    pub fn col(self, j: usize) -> Var<'t> {
        self.slice_cols(j, 1)
    }

    /// Zero-pads the columns so that `self` occupies `start..start+cols` of a
    /// `total`-column result.
    pub fn pad_cols(self, start: usize, total: usize) -> Var<'t> {
        let (r, c) = self.dims();
        assert!(start + c <= total, "pad_cols: {start}+{c} > {total}");
        self.unary_with(Op::PadCols { a: self.id, start }, |t| {
            let mut out = Tensor::zeros(r, total);
            for i in 0..r {
                for j in 0..c {
                    out.set(i, start + j, t.get(i, j));
                }
            }
            out
        })
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        if parts.len() == 1 {
            return parts[0];
        }
        let tape = parts[0].tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let tensors: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            Tensor::concat_cols(&tensors)
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        tape.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg)
    }

    /// Gradient of this scalar with respect to `x`, kept on the tape.
    pub fn grad_wrt(self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.tape.grad(self, &[x])?[0])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self::Output {
        self.scale(rhs)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self::Output {
        self.offset(rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        Var::neg(self)
    }
}

/// Gradient of a scalar function at `x`.
pub fn input_grad<F>(f: F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let y = f(&tape, xv);
    Ok(tape.gradients(y, &[xv])?.remove(0))
}

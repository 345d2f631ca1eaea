//! Wengert tape and the differentiable operations recorded on it.
//!
//! Every operation appends a node holding its forward value. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and `backward` is a single reverse sweep. A tape is meant to live for one
//! training step; leaf gradients accumulate across `backward` calls until
//! [`Tape::zero_grad`].

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::gemm::gemm;
use crate::tensor::{broadcast_shape, expand, numel, reduce_to, Tensor};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Log,
    Abs,
    /// `max(x, 0)`
    Relu,
    /// `ln(1 + e^{βx}) / β`
    Softplus(Real),
    Sigmoid,
    Tanh,
    Sin,
    Cos,
    Sqrt,
    Square,
    Scale(Real),
    Offset(Real),
    ClampMin(Real),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Unary(UnaryKind, usize),
    Binary(BinaryKind, usize, usize),
    MatMul {
        lhs: usize,
        rhs: usize,
        trans_lhs: bool,
        trans_rhs: bool,
    },
    WeightNorm {
        v: usize,
        g: usize,
        norms: Vec<Real>,
        clamped: Vec<bool>,
    },
    Sum(usize),
    SumAxis(usize),
    Broadcast(usize),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Slice {
        arg: usize,
        axis: usize,
        start: usize,
    },
    CumSumExclusive(usize),
    CumProdExclusive(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Denominator guard for weight normalization.
pub const WEIGHT_NORM_EPS: Real = 1e-12;

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
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// A differentiable input whose gradient is kept after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, value: Real) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .expect("concat needs at least one input")
            .shape();
        if axis >= first.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                rank: first.len(),
            });
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let requires = parts.iter().any(|p| self.requires_grad(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat(ids, axis),
            requires,
        ))
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().iter_mut().for_each(|g| *g = None);
    }

    /// Reverse sweep from a one-element `loss`, accumulating into leaf gradients.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        if !loss_node.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        if leaf_grads.len() < nodes.len() {
            leaf_grads.resize(nodes.len(), None);
        }

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let mut send = |target: usize, g: Vec<Real>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Leaf => {
                    let g = Tensor::new(node.value.shape().to_vec(), grad)?;
                    match &mut leaf_grads[id] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::Unary(kind, arg) => {
                    let x = &nodes[*arg].value;
                    let y = &node.value;
                    send(*arg, unary_backward(*kind, x.data(), y.data(), &grad));
                }
                Op::Binary(kind, lhs, rhs) => {
                    let a = &nodes[*lhs].value;
                    let b = &nodes[*rhs].value;
                    let out = node.value.shape();
                    let (ga, gb) = binary_backward(*kind, a, b, out, &grad);
                    if let Some(ga) = ga {
                        send(*lhs, ga);
                    }
                    if let Some(gb) = gb {
                        send(*rhs, gb);
                    }
                }
                Op::MatMul {
                    lhs,
                    rhs,
                    trans_lhs,
                    trans_rhs,
                } => {
                    let a = &nodes[*lhs].value;
                    let b = &nodes[*rhs].value;
                    let (ga, gb) = matmul_backward(a, b, *trans_lhs, *trans_rhs, &grad);
                    if nodes[*lhs].requires_grad {
                        send(*lhs, ga());
                    }
                    if nodes[*rhs].requires_grad {
                        send(*rhs, gb());
                    }
                }
                Op::WeightNorm {
                    v,
                    g,
                    norms,
                    clamped,
                } => {
                    let vv = &nodes[*v].value;
                    let gg = &nodes[*g].value;
                    let (dv, dg) = weight_norm_backward(vv, gg.data(), norms, clamped, &grad);
                    send(*v, dv);
                    send(*g, dg);
                }
                Op::Sum(arg) => {
                    let n = nodes[*arg].value.len();
                    send(*arg, vec![grad[0]; n]);
                }
                Op::SumAxis(arg) => {
                    let shape = nodes[*arg].value.shape();
                    send(*arg, expand(&grad, node.value.shape(), shape));
                }
                Op::Broadcast(arg) => {
                    let shape = nodes[*arg].value.shape();
                    send(*arg, reduce_to(&grad, node.value.shape(), shape));
                }
                Op::Reshape(arg) => send(*arg, grad),
                Op::Concat(parts, axis) => {
                    let out_shape = node.value.shape();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let row = out_shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let extent = nodes[p].value.shape()[*axis] * inner;
                        if nodes[p].requires_grad {
                            let mut g = Vec::with_capacity(outer * extent);
                            for o in 0..outer {
                                let s = o * row + offset;
                                g.extend_from_slice(&grad[s..s + extent]);
                            }
                            send(p, g);
                        }
                        offset += extent;
                    }
                }
                Op::Slice { arg, axis, start } => {
                    let in_shape = nodes[*arg].value.shape();
                    let out_shape = node.value.shape();
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let in_row = in_shape[*axis] * inner;
                    let out_row = out_shape[*axis] * inner;
                    let mut g = vec![0.0; numel(in_shape)];
                    for o in 0..outer {
                        let dst = o * in_row + start * inner;
                        g[dst..dst + out_row]
                            .copy_from_slice(&grad[o * out_row..(o + 1) * out_row]);
                    }
                    send(*arg, g);
                }
                Op::CumSumExclusive(arg) => {
                    let n = last_extent(node.value.shape());
                    let mut g = vec![0.0; grad.len()];
                    for (row_g, row_out) in grad.chunks(n).zip(g.chunks_mut(n)) {
                        let mut acc = 0.0;
                        for k in (0..n).rev() {
                            row_out[k] = acc;
                            acc += row_g[k];
                        }
                    }
                    send(*arg, g);
                }
                Op::CumProdExclusive(arg) => {
                    let n = last_extent(node.value.shape());
                    let x = &nodes[*arg].value;
                    let y = &node.value;
                    let mut g = vec![0.0; grad.len()];
                    for r in 0..grad.len() / n.max(1) {
                        let xs = &x.data()[r * n..(r + 1) * n];
                        let ys = &y.data()[r * n..(r + 1) * n];
                        let gs = &grad[r * n..(r + 1) * n];
                        // tail[k] = sum_{i>k} g_i prod_{k<j<i} x_j
                        let mut tail = 0.0;
                        for k in (0..n).rev() {
                            g[r * n + k] = ys[k] * tail;
                            tail = gs[k] + xs[k] * tail;
                        }
                    }
                    send(*arg, g);
                }
            }
        }
        Ok(())
    }
}

fn last_extent(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: Real, beta: Real) -> Real {
    let z = beta * x;
    // ln(1 + e^z) without overflow
    (z.max(0.0) + (-z.abs()).exp().ln_1p()) / beta
}

fn unary_forward(kind: UnaryKind, x: Real) -> Real {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Softplus(beta) => softplus(x, beta),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Square => x * x,
        UnaryKind::Scale(c) => c * x,
        UnaryKind::Offset(c) => x + c,
        UnaryKind::ClampMin(c) => x.max(c),
    }
}

fn unary_backward(kind: UnaryKind, x: &[Real], y: &[Real], g: &[Real]) -> Vec<Real> {
    let n = g.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (xi, yi, gi) = (x[i], y[i], g[i]);
        let d = match kind {
            UnaryKind::Neg => -gi,
            UnaryKind::Exp => gi * yi,
            UnaryKind::Log => gi / xi,
            UnaryKind::Abs => gi * signum0(xi),
            UnaryKind::Relu => {
                if xi > 0.0 {
                    gi
                } else {
                    0.0
                }
            }
            UnaryKind::Softplus(beta) => gi * sigmoid(beta * xi),
            UnaryKind::Sigmoid => gi * yi * (1.0 - yi),
            UnaryKind::Tanh => gi * (1.0 - yi * yi),
            UnaryKind::Sin => gi * xi.cos(),
            UnaryKind::Cos => -gi * xi.sin(),
            UnaryKind::Sqrt => {
                if yi > 0.0 {
                    gi / (2.0 * yi)
                } else {
                    0.0
                }
            }
            UnaryKind::Square => 2.0 * gi * xi,
            UnaryKind::Scale(c) => c * gi,
            UnaryKind::Offset(_) => gi,
            UnaryKind::ClampMin(c) => {
                if xi > c {
                    gi
                } else {
                    0.0
                }
            }
        };
        out.push(d);
    }
    out
}

fn signum0(x: Real) -> Real {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn binary_backward(
    kind: BinaryKind,
    a: &Tensor,
    b: &Tensor,
    out: &[usize],
    g: &[Real],
) -> (Option<Vec<Real>>, Option<Vec<Real>>) {
    match kind {
        BinaryKind::Add => (
            Some(reduce_to(g, out, a.shape())),
            Some(reduce_to(g, out, b.shape())),
        ),
        BinaryKind::Sub => {
            let neg: Vec<Real> = g.iter().map(|x| -x).collect();
            (
                Some(reduce_to(g, out, a.shape())),
                Some(reduce_to(&neg, out, b.shape())),
            )
        }
        BinaryKind::Mul => {
            let ea = expand(a.data(), a.shape(), out);
            let eb = expand(b.data(), b.shape(), out);
            let ga: Vec<Real> = g.iter().zip(&eb).map(|(g, b)| g * b).collect();
            let gb: Vec<Real> = g.iter().zip(&ea).map(|(g, a)| g * a).collect();
            (
                Some(reduce_to(&ga, out, a.shape())),
                Some(reduce_to(&gb, out, b.shape())),
            )
        }
        BinaryKind::Div => {
            let ea = expand(a.data(), a.shape(), out);
            let eb = expand(b.data(), b.shape(), out);
            let ga: Vec<Real> = g.iter().zip(&eb).map(|(g, b)| g / b).collect();
            let gb: Vec<Real> = g
                .iter()
                .zip(ea.iter().zip(&eb))
                .map(|(g, (a, b))| -g * a / (b * b))
                .collect();
            (
                Some(reduce_to(&ga, out, a.shape())),
                Some(reduce_to(&gb, out, b.shape())),
            )
        }
    }
}

/// Logical (rows, cols) of a possibly transposed 2-D operand.
fn logical_dims(t: &Tensor, trans: bool) -> (usize, usize) {
    let s = t.shape();
    if trans {
        (s[1], s[0])
    } else {
        (s[0], s[1])
    }
}

#[allow(clippy::type_complexity)]
fn matmul_backward<'a>(
    a: &'a Tensor,
    b: &'a Tensor,
    ta: bool,
    tb: bool,
    g: &'a [Real],
) -> (
    impl FnOnce() -> Vec<Real> + 'a,
    impl FnOnce() -> Vec<Real> + 'a,
) {
    // C[m,n] = op(A)[m,k] op(B)[k,n]
    let (m, k) = logical_dims(a, ta);
    let (_, n) = logical_dims(b, tb);
    let grad_a = move || {
        let mut out = vec![0.0; m * k];
        if ta {
            // dA[k,m] = op(B)[k,n] dC^T[n,m]
            gemm(k, n, m, b.data(), tb, g, true, &mut out);
        } else {
            // dA[m,k] = dC[m,n] op(B)^T[n,k]
            gemm(m, n, k, g, false, b.data(), !tb, &mut out);
        }
        out
    };
    let grad_b = move || {
        let mut out = vec![0.0; k * n];
        if tb {
            // dB[n,k] = dC^T[n,m] op(A)[m,k]
            gemm(n, m, k, g, true, a.data(), ta, &mut out);
        } else {
            // dB[k,n] = op(A)^T[k,m] dC[m,n]
            gemm(k, m, n, a.data(), !ta, g, false, &mut out);
        }
        out
    };
    (grad_a, grad_b)
}

fn weight_norm_backward(
    v: &Tensor,
    g: &[Real],
    norms: &[Real],
    clamped: &[bool],
    grad: &[Real],
) -> (Vec<Real>, Vec<Real>) {
    let (rows, cols) = (v.shape()[0], v.shape()[1]);
    let vd = v.data();
    let mut dv = vec![0.0; rows * cols];
    let mut dg = vec![0.0; cols];
    for j in 0..cols {
        let n = norms[j];
        let mut proj = 0.0;
        for i in 0..rows {
            proj += grad[i * cols + j] * vd[i * cols + j] / n;
        }
        dg[j] = proj;
        let scale = g[j] / n;
        for i in 0..rows {
            let u = vd[i * cols + j] / n;
            let radial = if clamped[j] { 0.0 } else { u * proj };
            dv[i * cols + j] = scale * (grad[i * cols + j] - radial);
        }
    }
    (dv, dg)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> Real {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Accumulated gradient of a leaf, if any flowed into it.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.leaf_grads.borrow().get(self.id).cloned().flatten()
    }

    fn unary(self, kind: UnaryKind) -> Var<'t> {
        let value = self.value().map(|x| unary_forward(kind, x));
        self.tape
            .push(value, Op::Unary(kind, self.id), self.requires_grad())
    }

    fn binary(self, kind: BinaryKind, rhs: Var<'t>, name: &'static str) -> Result<Var<'t>> {
        let a = self.value();
        let b = rhs.value();
        let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
            AutodiffError::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            }
        })?;
        let f: fn(Real, Real) -> Real = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        let data: Vec<Real> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ea = expand(a.data(), a.shape(), &out);
            let eb = expand(b.data(), b.shape(), &out);
            ea.iter().zip(&eb).map(|(&x, &y)| f(x, y)).collect()
        };
        let requires = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(
            Tensor::new(out, data)?,
            Op::Binary(kind, self.id, rhs.id),
            requires,
        ))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Add, rhs, "add")
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Sub, rhs, "sub")
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Mul, rhs, "mul")
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Div, rhs, "div")
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(UnaryKind::Neg)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryKind::Exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(UnaryKind::Log)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryKind::Abs)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(UnaryKind::Relu)
    }

    pub fn softplus(self, beta: Real) -> Var<'t> {
        self.unary(UnaryKind::Softplus(beta))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(UnaryKind::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(UnaryKind::Cos)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(UnaryKind::Square)
    }

    pub fn scale(self, c: Real) -> Var<'t> {
        self.unary(UnaryKind::Scale(c))
    }

    pub fn offset(self, c: Real) -> Var<'t> {
        self.unary(UnaryKind::Offset(c))
    }

    pub fn clamp_min(self, c: Real) -> Var<'t> {
        self.unary(UnaryKind::ClampMin(c))
    }

    /// `1 - x`
    pub fn one_minus(self) -> Var<'t> {
        self.neg().offset(1.0)
    }

    fn matmul_impl(self, rhs: Var<'t>, trans_lhs: bool, trans_rhs: bool) -> Result<Var<'t>> {
        let a = self.value();
        let b = rhs.value();
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        if a.shape().len() != 2 || b.shape().len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = logical_dims(&a, trans_lhs);
        let (k2, n) = logical_dims(&b, trans_rhs);
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), trans_lhs, b.data(), trans_rhs, &mut out);
        let requires = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                lhs: self.id,
                rhs: rhs.id,
                trans_lhs,
                trans_rhs,
            },
            requires,
        ))
    }

    /// `self[m,k] · rhs[k,n]`
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(rhs, false, false)
    }

    /// `self[m,k] · rhs[n,k]ᵀ`
    pub fn matmul_t(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(rhs, false, true)
    }

    /// `x[b,in] · weight[in,out] + bias[out]`
    pub fn linear(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let out_dim = weight.shape().get(1).copied();
        if bias.shape().len() != 1 || Some(bias.shape()[0]) != out_dim {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                lhs: weight.shape(),
                rhs: bias.shape(),
            });
        }
        self.matmul(weight)?.add(bias)
    }

    pub fn sum(self) -> Var<'t> {
        let total: Real = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(total), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as Real;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let d = x.data();
        for o in 0..outer {
            for a in 0..extent {
                let src = &d[(o * extent + a) * inner..(o * extent + a + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        Ok(self.tape.push(
            Tensor::new(out_shape, out)?,
            Op::SumAxis(self.id),
            self.requires_grad(),
        ))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        match broadcast_shape(x.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: x.shape().to_vec(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let data = expand(x.data(), x.shape(), shape);
        Ok(self.tape.push(
            Tensor::new(shape.to_vec(), data)?,
            Op::Broadcast(self.id),
            self.requires_grad(),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = (*self.value()).clone().reshape(shape.to_vec())?;
        Ok(self
            .tape
            .push(x, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Sub-range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        if start > end || end > shape[axis] {
            return Err(AutodiffError::InvalidSlice {
                start,
                end,
                extent: shape[axis],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let in_row = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let s = o * in_row + start * inner;
            data.extend_from_slice(&x.data()[s..s + (end - start) * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = end - start;
        Ok(self.tape.push(
            Tensor::new(out_shape, data)?,
            Op::Slice {
                arg: self.id,
                axis,
                start,
            },
            self.requires_grad(),
        ))
    }

    /// `y_i = Σ_{j<i} x_j` along the last axis.
    pub fn cumsum_exclusive(self) -> Var<'t> {
        let x = self.value();
        let n = last_extent(x.shape());
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
            let mut acc = 0.0;
            for k in 0..n {
                dst[k] = acc;
                acc += src[k];
            }
        }
        self.tape.push(
            Tensor::new(x.shape().to_vec(), out).expect("same shape"),
            Op::CumSumExclusive(self.id),
            self.requires_grad(),
        )
    }

    /// `y_i = Π_{j<i} x_j` along the last axis.
    pub fn cumprod_exclusive(self) -> Var<'t> {
        let x = self.value();
        let n = last_extent(x.shape());
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
            let mut acc = 1.0;
            for k in 0..n {
                dst[k] = acc;
                acc *= src[k];
            }
        }
        self.tape.push(
            Tensor::new(x.shape().to_vec(), out).expect("same shape"),
            Op::CumProdExclusive(self.id),
            self.requires_grad(),
        )
    }

    /// Weight normalization `W[:,j] = g[j] · V[:,j] / ‖V[:,j]‖` for `V[in,out]`, `g[out]`.
    pub fn weight_norm(self, g: Var<'t>) -> Result<Var<'t>> {
        let v = self.value();
        let gv = g.value();
        let shape = v.shape();
        if shape.len() != 2 || gv.shape() != [shape[1]] {
            return Err(AutodiffError::ShapeMismatch {
                op: "weight_norm",
                lhs: shape.to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let vd = v.data();
        let mut norms = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                norms[j] += vd[i * cols + j] * vd[i * cols + j];
            }
        }
        let mut clamped = vec![false; cols];
        for (j, n) in norms.iter_mut().enumerate() {
            *n = n.sqrt();
            if *n == 0.0 {
                return Err(AutodiffError::ZeroNorm { column: j });
            }
            if *n < WEIGHT_NORM_EPS {
                *n = WEIGHT_NORM_EPS;
                clamped[j] = true;
            }
        }
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = gv.data()[j] * vd[i * cols + j] / norms[j];
            }
        }
        let requires = self.requires_grad() || g.requires_grad();
        Ok(self.tape.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::WeightNorm {
                v: self.id,
                g: g.id,
                norms,
                clamped,
            },
            requires,
        ))
    }
}

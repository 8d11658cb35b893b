//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of nodes, each holding its forward value and the
//! operation that produced it. [`Var`] is a cheap copyable handle into the
//! tape. The graph is built fresh for every forward pass and can be
//! differentiated exactly once.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use super::functions::{sigmoid, silu, silu_grad, softplus};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Pointwise single-argument operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Exp,
    Sigmoid,
    Silu,
    Softplus,
    Tanh,
}

/// Pointwise two-argument operations.
///
/// Operands must have equal shapes, or one of them may have a trailing
/// extent of 1 where the other has `n` (e.g. `[B, L, 1]` against `[B, L, D]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// An operation with a hand-written adjoint, registered on the graph via
/// [`Graph::fused`]. Used for kernels (scan, convolution, normalization) that
/// would be wasteful to express as chains of elementwise nodes.
pub trait FusedOp {
    fn name(&self) -> &'static str;

    /// Adjoints for each input given the adjoint of the output. Entries of
    /// `needs` that are `false` may be answered with `None`.
    fn backward(
        &self,
        inputs: &[&[f64]],
        output: &[f64],
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Sum(usize),
    Mean(usize),
    SmoothL1 { pred: usize, target: usize, beta: f64 },
    Narrow { src: usize, axis: usize, start: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Repeat { src: usize, axis: usize },
    Fused(Box<dyn FusedOp>, Vec<usize>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    backward_done: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
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

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// How the two operands of a binary op line up.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    /// rhs has trailing extent 1; lhs trailing extent is the payload.
    Rhs(usize),
    Lhs(usize),
}

fn broadcast(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, Bcast)> {
    if a == b {
        return Some((a.to_vec(), Bcast::Same));
    }
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len();
    if a[..n - 1] != b[..n - 1] {
        return None;
    }
    match (a[n - 1], b[n - 1]) {
        (k, 1) => Some((a.to_vec(), Bcast::Rhs(k))),
        (1, k) => Some((b.to_vec(), Bcast::Lhs(k))),
        _ => None,
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Register the result of a [`FusedOp`] whose forward value has already
    /// been computed by the caller.
    pub fn fused<'g>(
        &'g self,
        op: Box<dyn FusedOp>,
        inputs: &[Var<'g>],
        shape: Vec<usize>,
        value: Vec<f64>,
    ) -> Var<'g> {
        let rg = inputs.iter().any(|v| self.rg(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(shape, value, Op::Fused(op, ids), rg)
    }

    /// Reverse pass from a scalar `loss`. May run once per graph.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape.clone()));
        }
        self.backward_done.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for i in (0..=loss.id).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else {
                continue;
            };
            backprop_node(&nodes, node, g, lo);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`; zeros when
    /// `v` was not reachable from the loss.
    pub fn grad(&self, v: Var<'_>) -> Tensor {
        let nodes = self.nodes.borrow();
        let shape = &nodes[v.id].shape;
        let grads = self.grads.borrow();
        match grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Unary(kind, a) => {
            let a = *a;
            if !needs(a) {
                return;
            }
            let x = &nodes[a].value;
            let y = &node.value;
            let dst = accumulate(&mut grads[a], x.len());
            match kind {
                UnaryOp::Exp => {
                    for i in 0..x.len() {
                        dst[i] += g[i] * y[i];
                    }
                }
                UnaryOp::Sigmoid => {
                    for i in 0..x.len() {
                        dst[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                UnaryOp::Silu => {
                    for i in 0..x.len() {
                        dst[i] += g[i] * silu_grad(x[i]);
                    }
                }
                UnaryOp::Softplus => {
                    for i in 0..x.len() {
                        dst[i] += g[i] * sigmoid(x[i]);
                    }
                }
                UnaryOp::Tanh => {
                    for i in 0..x.len() {
                        dst[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
        }
        Op::Binary(kind, a, b) => {
            let (a, b) = (*a, *b);
            let (_, bc) = broadcast(&nodes[a].shape, &nodes[b].shape).expect("checked at build");
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let ai = |i: usize| match bc {
                Bcast::Lhs(k) => i / k,
                _ => i,
            };
            let bi = |i: usize| match bc {
                Bcast::Rhs(k) => i / k,
                _ => i,
            };
            if needs(a) {
                let dst = accumulate(&mut grads[a], av.len());
                for i in 0..g.len() {
                    let d = match kind {
                        BinaryOp::Add | BinaryOp::Sub => g[i],
                        BinaryOp::Mul => g[i] * bv[bi(i)],
                    };
                    dst[ai(i)] += d;
                }
            }
            if needs(b) {
                let dst = accumulate(&mut grads[b], bv.len());
                for i in 0..g.len() {
                    let d = match kind {
                        BinaryOp::Add => g[i],
                        BinaryOp::Sub => -g[i],
                        BinaryOp::Mul => g[i] * av[ai(i)],
                    };
                    dst[bi(i)] += d;
                }
            }
        }
        Op::Scale(a, c) => {
            if needs(*a) {
                let dst = accumulate(&mut grads[*a], g.len());
                for (d, gi) in dst.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let bshape = &nodes[b].shape;
            let (k, n) = (bshape[0], bshape[1]);
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let rows = av.len() / k;
            if needs(a) {
                // dA = G · Bᵀ
                let mut bt = vec![0.0; k * n];
                for kk in 0..k {
                    for j in 0..n {
                        bt[j * k + kk] = bv[kk * n + j];
                    }
                }
                let dst = accumulate(&mut grads[a], av.len());
                matmul_into(g, &bt, n, k, dst);
            }
            if needs(b) {
                // dB = Aᵀ · G
                let dst = accumulate(&mut grads[b], bv.len());
                for r in 0..rows {
                    let arow = &av[r * k..(r + 1) * k];
                    let grow = &g[r * n..(r + 1) * n];
                    for (kk, &aval) in arow.iter().enumerate() {
                        if aval == 0.0 {
                            continue;
                        }
                        let drow = &mut dst[kk * n..(kk + 1) * n];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += aval * gv;
                        }
                    }
                }
            }
        }
        Op::AddRow(a, bias) => {
            let (a, bias) = (*a, *bias);
            if needs(a) {
                let dst = accumulate(&mut grads[a], g.len());
                for (d, gi) in dst.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            if needs(bias) {
                let n = nodes[bias].value.len();
                let dst = accumulate(&mut grads[bias], n);
                for row in g.chunks_exact(n) {
                    for (d, gi) in dst.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            let a = *a;
            if needs(a) {
                let len = nodes[a].value.len();
                let scale = match node.op {
                    Op::Mean(_) => 1.0 / len as f64,
                    _ => 1.0,
                };
                let dst = accumulate(&mut grads[a], len);
                for d in dst.iter_mut() {
                    *d += g[0] * scale;
                }
            }
        }
        Op::SmoothL1 { pred, target, beta } => {
            let (p, t) = (*pred, *target);
            let pv = &nodes[p].value;
            let tv = &nodes[t].value;
            let inv_n = 1.0 / pv.len() as f64;
            let dl = |i: usize| {
                let d = pv[i] - tv[i];
                let dd = if d.abs() < *beta { d / beta } else { d.signum() };
                dd * inv_n * g[0]
            };
            if needs(p) {
                let dst = accumulate(&mut grads[p], pv.len());
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += dl(i);
                }
            }
            if needs(t) {
                let dst = accumulate(&mut grads[t], tv.len());
                for (i, d) in dst.iter_mut().enumerate() {
                    *d -= dl(i);
                }
            }
        }
        Op::Narrow { src, axis, start } => {
            let src = *src;
            if !needs(src) {
                return;
            }
            let sshape = &nodes[src].shape;
            let (outer, extent, inner) = axis_split(sshape, *axis);
            let len = node.shape[*axis];
            let dst = accumulate(&mut grads[src], nodes[src].value.len());
            for o in 0..outer {
                let s0 = (o * extent + start) * inner;
                let g0 = o * len * inner;
                for (d, gi) in dst[s0..s0 + len * inner]
                    .iter_mut()
                    .zip(&g[g0..g0 + len * inner])
                {
                    *d += gi;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_split(&node.shape, *axis);
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].shape[*axis];
                if needs(p) {
                    let dst = accumulate(&mut grads[p], nodes[p].value.len());
                    for o in 0..outer {
                        let g0 = (o * total + offset) * inner;
                        let d0 = o * len * inner;
                        for (d, gi) in dst[d0..d0 + len * inner]
                            .iter_mut()
                            .zip(&g[g0..g0 + len * inner])
                        {
                            *d += gi;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Repeat { src, axis } => {
            let src = *src;
            if !needs(src) {
                return;
            }
            let (outer, n, inner) = axis_split(&node.shape, *axis);
            let dst = accumulate(&mut grads[src], nodes[src].value.len());
            for o in 0..outer {
                for r in 0..n {
                    let g0 = (o * n + r) * inner;
                    for (d, gi) in dst[o * inner..(o + 1) * inner]
                        .iter_mut()
                        .zip(&g[g0..g0 + inner])
                    {
                        *d += gi;
                    }
                }
            }
        }
        Op::Fused(op, ids) => {
            let inputs: Vec<&[f64]> = ids.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let need: Vec<bool> = ids.iter().map(|&i| needs(i)).collect();
            let out = op.backward(&inputs, &node.value, g, &need);
            for ((&id, gi), need) in ids.iter().zip(out).zip(need) {
                if let (Some(gi), true) = (gi, need) {
                    let dst = accumulate(&mut grads[id], gi.len());
                    for (d, v) in dst.iter_mut().zip(&gi) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `out[r, :] += a[r, :] · b` for row-major `a: [rows, k]`, `b: [k, n]`.
fn matmul_into(a: &[f64], b: &[f64], k: usize, n: usize, out: &mut [f64]) {
    let rows = a.len() / k;
    for r in 0..rows {
        let arow = &a[r * k..(r + 1) * k];
        let orow = &mut out[r * n..(r + 1) * n];
        for (kk, &aval) in arow.iter().enumerate() {
            if aval == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aval * bv;
            }
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.rg(self.id)
    }

    /// Borrow the forward value.
    pub fn data(&self) -> Ref<'g, [f64]> {
        Ref::map(self.graph.nodes.borrow(), |n| n[self.id].value.as_slice())
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.graph.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape")
    }

    pub fn item(&self) -> Option<f64> {
        self.value().item()
    }

    fn same_graph(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs"
        );
    }

    pub fn unary(self, kind: UnaryOp) -> Var<'g> {
        let value: Vec<f64> = {
            let x = self.data();
            match kind {
                UnaryOp::Exp => x.iter().map(|v| v.exp()).collect(),
                UnaryOp::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
                UnaryOp::Silu => x.iter().map(|&v| silu(v)).collect(),
                UnaryOp::Softplus => x.iter().map(|&v| softplus(v)).collect(),
                UnaryOp::Tanh => x.iter().map(|v| v.tanh()).collect(),
            }
        };
        let rg = self.requires_grad();
        self.graph
            .push(self.shape(), value, Op::Unary(kind, self.id), rg)
    }

    pub fn binary(self, kind: BinaryOp, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let (ashape, bshape) = (self.shape(), other.shape());
        let (shape, bc) = broadcast(&ashape, &bshape)
            .ok_or_else(|| shape_err("elementwise", &ashape, &bshape))?;
        let value = {
            let a = self.data();
            let b = other.data();
            let len = numel(&shape);
            let f = |x: f64, y: f64| match kind {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            };
            match bc {
                Bcast::Same => (0..len).map(|i| f(a[i], b[i])).collect::<Vec<_>>(),
                Bcast::Rhs(k) => (0..len).map(|i| f(a[i], b[i / k])).collect(),
                Bcast::Lhs(k) => (0..len).map(|i| f(a[i / k], b[i])).collect(),
            }
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self
            .graph
            .push(shape, value, Op::Binary(kind, self.id, other.id), rg))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(UnaryOp::Exp)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn silu(self) -> Var<'g> {
        self.unary(UnaryOp::Silu)
    }

    pub fn softplus(self) -> Var<'g> {
        self.unary(UnaryOp::Softplus)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let value = self.data().iter().map(|v| v * c).collect();
        let rg = self.requires_grad();
        self.graph
            .push(self.shape(), value, Op::Scale(self.id, c), rg)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    /// `[.., M, K] · [K, N] -> [.., M, N]`.
    pub fn matmul(self, w: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&w);
        let (ashape, wshape) = (self.shape(), w.shape());
        if ashape.is_empty() || wshape.len() != 2 || *ashape.last().unwrap() != wshape[0] {
            return Err(shape_err("matmul", &ashape, &wshape));
        }
        let (k, n) = (wshape[0], wshape[1]);
        let value = {
            let a = self.data();
            let b = w.data();
            let mut out = vec![0.0; a.len() / k * n];
            matmul_into(&a, &b, k, n, &mut out);
            out
        };
        let mut shape = ashape;
        *shape.last_mut().unwrap() = n;
        let rg = self.requires_grad() || w.requires_grad();
        Ok(self.graph.push(shape, value, Op::MatMul(self.id, w.id), rg))
    }

    /// Adds a `[N]` vector to every row of `[.., N]`.
    pub fn add_row(self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&bias);
        let (ashape, bshape) = (self.shape(), bias.shape());
        if bshape.len() != 1 || ashape.last() != Some(&bshape[0]) {
            return Err(shape_err("add_row", &ashape, &bshape));
        }
        let value = {
            let a = self.data();
            let b = bias.data();
            let mut out = a.to_vec();
            for row in out.chunks_exact_mut(b.len()) {
                for (o, bv) in row.iter_mut().zip(b.iter()) {
                    *o += bv;
                }
            }
            out
        };
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self
            .graph
            .push(ashape, value, Op::AddRow(self.id, bias.id), rg))
    }

    /// `x · W + b`.
    pub fn linear(self, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.matmul(w)?.add_row(b)
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.data().iter().sum();
        let rg = self.requires_grad();
        self.graph.push(Vec::new(), vec![s], Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'g> {
        let s = {
            let d = self.data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let rg = self.requires_grad();
        self.graph.push(Vec::new(), vec![s], Op::Mean(self.id), rg)
    }

    /// Mean over all elements of the smooth-L1 (Huber-type) penalty on
    /// `self - target`.
    pub fn smooth_l1(self, target: Var<'g>, beta: f64) -> Result<Var<'g>> {
        self.same_graph(&target);
        let (a, b) = (self.shape(), target.shape());
        if a != b {
            return Err(shape_err("smooth_l1", &a, &b));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("smooth_l1 beta must be > 0, got {beta}")));
        }
        let loss = {
            let p = self.data();
            let t = target.data();
            let total: f64 = p
                .iter()
                .zip(t.iter())
                .map(|(x, y)| super::functions::smooth_l1_elem(x - y, beta))
                .sum();
            total / p.len() as f64
        };
        let rg = self.requires_grad() || target.requires_grad();
        Ok(self.graph.push(
            Vec::new(),
            vec![loss],
            Op::SmoothL1 {
                pred: self.id,
                target: target.id,
                beta,
            },
            rg,
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err("narrow", &shape, &[axis, start, len]));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let value = {
            let src = self.data();
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s0 = (o * extent + start) * inner;
                out.extend_from_slice(&src[s0..s0 + len * inner]);
            }
            out
        };
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.requires_grad();
        Ok(self.graph.push(
            oshape,
            value,
            Op::Narrow {
                src: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Expand an extent-1 `axis` to `n` copies.
    pub fn repeat(self, axis: usize, n: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        if axis >= shape.len() || shape[axis] != 1 || n == 0 {
            return Err(shape_err("repeat", &shape, &[axis, n]));
        }
        let (outer, _, inner) = axis_split(&shape, axis);
        let value = {
            let src = self.data();
            let mut out = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
                }
            }
            out
        };
        let mut oshape = shape;
        oshape[axis] = n;
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(oshape, value, Op::Repeat { src: self.id, axis }, rg))
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<'g>(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let graph = first.graph;
    let base = first.shape();
    if axis >= base.len() {
        return Err(shape_err("concat", &base, &[axis]));
    }
    let mut total = 0;
    for p in parts {
        first.same_graph(p);
        let s = p.shape();
        let mut a = s.clone();
        let mut b = base.clone();
        a[axis] = 0;
        b[axis] = 0;
        if a != b {
            return Err(shape_err("concat", &base, &s));
        }
        total += s[axis];
    }
    let (outer, _, inner) = axis_split(&base, axis);
    let mut value = Vec::with_capacity(outer * total * inner);
    {
        let datas: Vec<_> = parts.iter().map(|p| (p.data(), p.shape()[axis])).collect();
        for o in 0..outer {
            for (d, len) in &datas {
                value.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let rg = parts.iter().any(|p| p.requires_grad());
    Ok(graph.push(
        shape,
        value,
        Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
            axis,
        },
        rg,
    ))
}

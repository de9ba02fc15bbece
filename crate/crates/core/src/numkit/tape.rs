//! Reverse-mode gradient tape.
//!
//! The tape is an append-only list of nodes. Every node's inputs were pushed
//! before it, so walking the list backwards is a reverse topological order.
//! A value used several times (an embedding appearing on both sides of
//! `E·Eᵀ`) receives the sum of every path's contribution.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    RowSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    NodeAffine(Var, Var, Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `∂loss/∂v`; exactly zero for values the loss does not depend on.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.adjoints[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.adjoints[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.any_grad(inputs);
        self.push(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.record(out, Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        Ok(self.record(out, Op::Transpose(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = tensor::relu(self.value(a));
        self.record(out, Op::Relu(a), &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let out = tensor::row_softmax(self.value(a))?;
        Ok(self.record(out, Op::RowSoftmax(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = tensor::scale(self.value(a), c);
        self.record(out, Op::Scale(a, c), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.record(out, Op::Reshape(a), &[a]))
    }

    /// See [`tensor::node_affine`].
    pub fn node_affine(&mut self, h: Var, theta: Var, bias: Var) -> Result<Var> {
        let out = tensor::node_affine(self.value(h), self.value(theta), self.value(bias))?;
        Ok(self.record(out, Op::NodeAffine(h, theta, bias), &[h, theta, bias]))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = tensor::abs(self.value(a));
        self.record(out, Op::Abs(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = tensor::mean(self.value(a));
        self.record(out, Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = tensor::sum(self.value(a));
        self.record(out, Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = tensor::sum_squares(self.value(a));
        self.record(out, Op::SumSquares(a), &[a])
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match node.op {
                Op::Leaf | Op::Constant => {
                    adj[idx] = Some(g);
                }
                Op::Matmul(a, b) => {
                    if self.needs(a) {
                        let bt = tensor::transpose(self.value(b))?;
                        accumulate(&mut adj, a, tensor::matmul(&g, &bt)?);
                    }
                    if self.needs(b) {
                        let at = tensor::transpose(self.value(a))?;
                        accumulate(&mut adj, b, tensor::matmul(&at, &g)?);
                    }
                }
                Op::Transpose(a) => accumulate(&mut adj, a, tensor::transpose(&g)?),
                Op::Relu(a) => {
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut d = g;
                    for (drow, yrow) in d.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for (dv, &yv) in drow.iter_mut().zip(yrow) {
                            *dv = yv * (*dv - dot);
                        }
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::Add(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut adj, b, g.clone());
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut adj, b, tensor::scale(&g, -1.0));
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::Scale(a, c) => accumulate(&mut adj, a, tensor::scale(&g, c)),
                Op::Reshape(a) => {
                    let shape = self.value(a).shape().to_vec();
                    accumulate(&mut adj, a, g.reshape(&shape)?);
                }
                Op::NodeAffine(h, theta, bias) => {
                    let (dh, dtheta, dbias) =
                        node_affine_backward(self.value(h), self.value(theta), &g)?;
                    accumulate(&mut adj, h, dh);
                    accumulate(&mut adj, theta, dtheta);
                    accumulate(&mut adj, bias, dbias);
                }
                Op::Abs(a) => {
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        *dv *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::Mean(a) => {
                    let av = self.value(a);
                    let s = g.data()[0] / av.numel() as f64;
                    accumulate(&mut adj, a, Tensor::filled(av.shape(), s));
                }
                Op::Sum(a) => {
                    let av = self.value(a);
                    accumulate(&mut adj, a, Tensor::filled(av.shape(), g.data()[0]));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.data()[0];
                    accumulate(&mut adj, a, tensor::scale(self.value(a), s));
                }
            }
        }

        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn node_affine_backward(h: &Tensor, theta: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let n = theta.shape()[0];
    let (c, f) = (theta.shape()[1], theta.shape()[2]);
    let batch = h.cols() / c;
    let mut dh = vec![0.0; h.numel()];
    let mut dtheta = vec![0.0; theta.numel()];
    let mut dbias = vec![0.0; n * f];
    let (hd, td, gd) = (h.data(), theta.data(), g.data());
    for i in 0..n {
        let th = &td[i * c * f..(i + 1) * c * f];
        let dth = &mut dtheta[i * c * f..(i + 1) * c * f];
        let db = &mut dbias[i * f..(i + 1) * f];
        for b in 0..batch {
            let hoff = i * batch * c + b * c;
            let goff = i * batch * f + b * f;
            let grow = &gd[goff..goff + f];
            for (dbv, &gv) in db.iter_mut().zip(grow) {
                *dbv += gv;
            }
            for ci in 0..c {
                let hv = hd[hoff + ci];
                let wrow = &th[ci * f..(ci + 1) * f];
                let dwrow = &mut dth[ci * f..(ci + 1) * f];
                let mut acc = 0.0;
                for k in 0..f {
                    acc += grow[k] * wrow[k];
                    dwrow[k] += hv * grow[k];
                }
                dh[hoff + ci] = acc;
            }
        }
    }
    Ok((
        Tensor::new(h.shape(), dh)?,
        Tensor::new(theta.shape(), dtheta)?,
        Tensor::new(&[n, f], dbias)?,
    ))
}

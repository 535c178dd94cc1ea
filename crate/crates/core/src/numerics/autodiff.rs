//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Model code is written once against the [`Ops`] trait. [`Eager`] evaluates
//! it directly; [`Tape`] additionally records every operation so that
//! [`Tape::backward`] can propagate adjoints from a scalar loss to every
//! leaf.
//!
//! Leaves borrow their tensors (`Cow::Borrowed`), so binding a model's
//! parameters to a fresh tape per sample does not copy weights.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::tensor::{gelu_grad, row_stats, Tensor};
use crate::scalar::Scalar;

/// The operation set needed by the transformer forward pass.
pub trait Ops<'a, S: Scalar> {
    type Var: Clone;

    /// A differentiable input (model parameter).
    fn leaf(&mut self, t: &'a Tensor<S>) -> Self::Var;
    /// A non-differentiable input.
    fn constant(&mut self, t: Tensor<S>) -> Self::Var;
    fn value<'b>(&'b self, v: &'b Self::Var) -> &'b Tensor<S>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    /// `a · bᵀ`
    fn matmul_t(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn add_row(&mut self, a: &Self::Var, bias: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, a: &Self::Var, s: S) -> Self::Var;
    fn softmax_rows(&mut self, a: &Self::Var) -> Self::Var;
    fn layernorm(
        &mut self,
        x: &Self::Var,
        gamma: &Self::Var,
        beta: &Self::Var,
        eps: S,
    ) -> Result<Self::Var>;
    fn gelu(&mut self, a: &Self::Var) -> Self::Var;
    fn gather_cols(&mut self, a: &Self::Var, idx: &[usize]) -> Result<Self::Var>;
    fn gather_rows(&mut self, a: &Self::Var, idx: &[usize]) -> Result<Self::Var>;
    fn concat_cols(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
    fn concat_rows(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
    /// `-log softmax(logits)[label]` for a single row of logits.
    fn cross_entropy(&mut self, logits: &Self::Var, label: usize) -> Result<Self::Var>;

    fn slice_cols(&mut self, a: &Self::Var, start: usize, len: usize) -> Result<Self::Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_cols(a, &idx)
    }

    fn slice_rows(&mut self, a: &Self::Var, start: usize, len: usize) -> Result<Self::Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_rows(a, &idx)
    }
}

fn cross_entropy_value<S: Scalar>(logits: &Tensor<S>, label: usize) -> Result<(S, Vec<S>)> {
    if logits.rows() != 1 {
        return Err(Error::shape(
            "cross_entropy",
            format!("expected one row of logits, got {:?}", logits.shape()),
        ));
    }
    if label >= logits.cols() {
        return Err(Error::contract(
            "numerics",
            format!("label {label} out of range for {} classes", logits.cols()),
        ));
    }
    let probs = logits.softmax_rows().into_data();
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(S::neg_infinity(), S::max);
    let lse = logits
        .data()
        .iter()
        .map(|&z| (z - max).exp())
        .sum::<S>()
        .ln()
        + max;
    Ok((lse - logits.data()[label], probs))
}

/// Direct evaluation without recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<'a, S: Scalar> Ops<'a, S> for Eager {
    type Var = Cow<'a, Tensor<S>>;

    fn leaf(&mut self, t: &'a Tensor<S>) -> Self::Var {
        Cow::Borrowed(t)
    }

    fn constant(&mut self, t: Tensor<S>) -> Self::Var {
        Cow::Owned(t)
    }

    fn value<'b>(&'b self, v: &'b Self::Var) -> &'b Tensor<S> {
        v
    }

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        a.matmul(b).map(Cow::Owned)
    }

    fn matmul_t(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        a.matmul_t(b).map(Cow::Owned)
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        a.add(b).map(Cow::Owned)
    }

    fn add_row(&mut self, a: &Self::Var, bias: &Self::Var) -> Result<Self::Var> {
        a.add_row(bias).map(Cow::Owned)
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        a.mul(b).map(Cow::Owned)
    }

    fn scale(&mut self, a: &Self::Var, s: S) -> Self::Var {
        Cow::Owned(a.scale(s))
    }

    fn softmax_rows(&mut self, a: &Self::Var) -> Self::Var {
        Cow::Owned(a.softmax_rows())
    }

    fn layernorm(
        &mut self,
        x: &Self::Var,
        gamma: &Self::Var,
        beta: &Self::Var,
        eps: S,
    ) -> Result<Self::Var> {
        x.layernorm(gamma, beta, eps).map(Cow::Owned)
    }

    fn gelu(&mut self, a: &Self::Var) -> Self::Var {
        Cow::Owned(a.gelu())
    }

    fn gather_cols(&mut self, a: &Self::Var, idx: &[usize]) -> Result<Self::Var> {
        a.gather_cols(idx).map(Cow::Owned)
    }

    fn gather_rows(&mut self, a: &Self::Var, idx: &[usize]) -> Result<Self::Var> {
        a.gather_rows(idx).map(Cow::Owned)
    }

    fn concat_cols(&mut self, parts: &[Self::Var]) -> Result<Self::Var> {
        let refs: Vec<&Tensor<S>> = parts.iter().map(|p| p.as_ref()).collect();
        Tensor::concat_cols(&refs).map(Cow::Owned)
    }

    fn concat_rows(&mut self, parts: &[Self::Var]) -> Result<Self::Var> {
        let refs: Vec<&Tensor<S>> = parts.iter().map(|p| p.as_ref()).collect();
        Tensor::concat_rows(&refs).map(Cow::Owned)
    }

    fn cross_entropy(&mut self, logits: &Self::Var, label: usize) -> Result<Self::Var> {
        let (loss, _) = cross_entropy_value(logits, label)?;
        Ok(Cow::Owned(Tensor::scalar(loss)))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(VarId, VarId),
    MatMulT(VarId, VarId),
    Add(VarId, VarId),
    AddRow(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, S),
    Softmax(VarId),
    LayerNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: S,
    },
    Gelu(VarId),
    GatherCols(VarId, Vec<usize>),
    GatherRows(VarId, Vec<usize>),
    ConcatCols(Vec<VarId>),
    ConcatRows(Vec<VarId>),
    CrossEntropy {
        logits: VarId,
        label: usize,
        probs: Vec<S>,
    },
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recording backend. Single-writer; build one per forward pass.
pub struct Tape<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
}

impl<'a, S: Scalar> Default for Tape<'a, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, parents: &[VarId]) -> VarId {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn val(&self, v: VarId) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Propagates adjoints from the scalar `loss` back through the tape.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<S>> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(Error::contract(
                "numerics",
                format!("backward needs a scalar loss, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(
        &self,
        node: &Node<'a, S>,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let wants = |v: VarId| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.matmul_t(self.val(*b))?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, self.val(*a).t_matmul(g)?)?;
                }
            }
            Op::MatMulT(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.matmul(self.val(*b))?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.t_matmul(self.val(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(*v) {
                        accumulate(grads, *v, g.clone())?;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*bias) {
                    let c = g.cols();
                    let mut db = vec![S::zero(); c];
                    for r in 0..g.rows() {
                        for (d, &x) in db.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    let shape = self.val(*bias).shape().to_vec();
                    accumulate(grads, *bias, Tensor::new(shape, db)?)?;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.mul(self.val(*b))?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.mul(self.val(*a))?)?;
                }
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, g.scale(*s))?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let inner: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((d, &p), &q) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = p * (q - inner);
                    }
                }
                debug_assert_eq!(dx.cols(), c);
                accumulate(grads, *a, dx)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => self.layernorm_backward(*x, *gamma, *beta, *eps, g, grads)?,
            Op::Gelu(a) => {
                let x = self.val(*a);
                let mut dx = g.clone();
                for (d, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
                    *d *= gelu_grad(xi);
                }
                accumulate(grads, *a, dx)?;
            }
            Op::GatherCols(a, idx) => {
                let src = self.val(*a);
                let mut da = Tensor::zeros(src.shape());
                let c = src.cols();
                for r in 0..g.rows() {
                    let grow = g.row(r);
                    let drow = &mut da.data_mut()[r * c..(r + 1) * c];
                    for (&j, &v) in idx.iter().zip(grow) {
                        drow[j] += v;
                    }
                }
                accumulate(grads, *a, da)?;
            }
            Op::GatherRows(a, idx) => {
                let src = self.val(*a);
                let mut da = Tensor::zeros(src.shape());
                for (r, &i) in idx.iter().enumerate() {
                    for (d, &v) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *a, da)?;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.val(*p).cols();
                    if wants(*p) {
                        accumulate(grads, *p, g.slice_cols(off, w)?)?;
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.val(*p).rows();
                    if wants(*p) {
                        let shape = self.val(*p).shape().to_vec();
                        accumulate(grads, *p, g.slice_rows(off, h)?.reshape(&shape)?)?;
                    }
                    off += h;
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gs = g.data()[0];
                let mut d = probs.clone();
                d[*label] -= S::one();
                for x in &mut d {
                    *x *= gs;
                }
                let shape = self.val(*logits).shape().to_vec();
                accumulate(grads, *logits, Tensor::new(shape, d)?)?;
            }
        }
        Ok(())
    }

    fn layernorm_backward(
        &self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: S,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let xv = self.val(x);
        let gv = self.val(gamma);
        let c = xv.cols();
        let n = S::lit(c as f64);
        let mut dx = Tensor::zeros(xv.shape());
        let mut dgamma = vec![S::zero(); c];
        let mut dbeta = vec![S::zero(); c];
        let mut xhat = vec![S::zero(); c];
        let mut dxhat = vec![S::zero(); c];
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let grow = g.row(r);
            let (mean, inv_std) = row_stats(row, eps);
            for j in 0..c {
                xhat[j] = (row[j] - mean) * inv_std;
                dgamma[j] += grow[j] * xhat[j];
                dbeta[j] += grow[j];
                dxhat[j] = grow[j] * gv.data()[j];
            }
            let mean_d = dxhat.iter().copied().sum::<S>() / n;
            let mean_dx = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<S>() / n;
            for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                *d = inv_std * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
        if self.nodes[x.0].needs_grad {
            accumulate(grads, x, dx)?;
        }
        if self.nodes[gamma.0].needs_grad {
            accumulate(grads, gamma, Tensor::new(gv.shape().to_vec(), dgamma)?)?;
        }
        if self.nodes[beta.0].needs_grad {
            let shape = self.val(beta).shape().to_vec();
            accumulate(grads, beta, Tensor::new(shape, dbeta)?)?;
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: VarId, g: Tensor<S>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<'a, S: Scalar> Ops<'a, S> for Tape<'a, S> {
    type Var = VarId;

    fn leaf(&mut self, t: &'a Tensor<S>) -> VarId {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        VarId(self.nodes.len() - 1)
    }

    fn constant(&mut self, t: Tensor<S>) -> VarId {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        VarId(self.nodes.len() - 1)
    }

    fn value<'b>(&'b self, v: &'b VarId) -> &'b Tensor<S> {
        self.val(*v)
    }

    fn matmul(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let v = self.val(*a).matmul(self.val(*b))?;
        Ok(self.push(v, Op::MatMul(*a, *b), &[*a, *b]))
    }

    fn matmul_t(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let v = self.val(*a).matmul_t(self.val(*b))?;
        Ok(self.push(v, Op::MatMulT(*a, *b), &[*a, *b]))
    }

    fn add(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let v = self.val(*a).add(self.val(*b))?;
        Ok(self.push(v, Op::Add(*a, *b), &[*a, *b]))
    }

    fn add_row(&mut self, a: &VarId, bias: &VarId) -> Result<VarId> {
        let v = self.val(*a).add_row(self.val(*bias))?;
        Ok(self.push(v, Op::AddRow(*a, *bias), &[*a, *bias]))
    }

    fn mul(&mut self, a: &VarId, b: &VarId) -> Result<VarId> {
        let v = self.val(*a).mul(self.val(*b))?;
        Ok(self.push(v, Op::Mul(*a, *b), &[*a, *b]))
    }

    fn scale(&mut self, a: &VarId, s: S) -> VarId {
        let v = self.val(*a).scale(s);
        self.push(v, Op::Scale(*a, s), &[*a])
    }

    fn softmax_rows(&mut self, a: &VarId) -> VarId {
        let v = self.val(*a).softmax_rows();
        self.push(v, Op::Softmax(*a), &[*a])
    }

    fn layernorm(&mut self, x: &VarId, gamma: &VarId, beta: &VarId, eps: S) -> Result<VarId> {
        let v = self
            .val(*x)
            .layernorm(self.val(*gamma), self.val(*beta), eps)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: *x,
                gamma: *gamma,
                beta: *beta,
                eps,
            },
            &[*x, *gamma, *beta],
        ))
    }

    fn gelu(&mut self, a: &VarId) -> VarId {
        let v = self.val(*a).gelu();
        self.push(v, Op::Gelu(*a), &[*a])
    }

    fn gather_cols(&mut self, a: &VarId, idx: &[usize]) -> Result<VarId> {
        let v = self.val(*a).gather_cols(idx)?;
        Ok(self.push(v, Op::GatherCols(*a, idx.to_vec()), &[*a]))
    }

    fn gather_rows(&mut self, a: &VarId, idx: &[usize]) -> Result<VarId> {
        let v = self.val(*a).gather_rows(idx)?;
        Ok(self.push(v, Op::GatherRows(*a, idx.to_vec()), &[*a]))
    }

    fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId> {
        let refs: Vec<&Tensor<S>> = parts.iter().map(|p| self.val(*p)).collect();
        let v = Tensor::concat_cols(&refs)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        let refs: Vec<&Tensor<S>> = parts.iter().map(|p| self.val(*p)).collect();
        let v = Tensor::concat_rows(&refs)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    fn cross_entropy(&mut self, logits: &VarId, label: usize) -> Result<VarId> {
        let (loss, probs) = cross_entropy_value(self.val(*logits), label)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: *logits,
                label,
                probs,
            },
            &[*logits],
        ))
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `v`; `None` when the loss does not depend on it.
    pub fn get(&self, v: VarId) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: VarId) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its value and the handles of its
//! inputs. [`Graph::backward`] walks the tape from the loss back to the
//! leaves and returns a fresh [`Gradients`] table, so gradients never
//! accumulate across calls.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::ops::{self, Ops};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    Dense { x: Var, w: Var, b: Var, dims: [usize; 3] },
    LeakyRelu { x: Var, leak: T },
    Upsample { x: Var, factor: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, channels: Vec<usize> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, factor: T },
    SubScalar { x: Var, s: Var },
    Abs { x: Var },
    Square { x: Var },
    Softplus { x: Var },
    Mean { x: Var },
    Sum { x: Var },
    Reshape { x: Var },
    Gram { x: Var, dims: [usize; 3] },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf. `None` when the leaf is frozen, not on a path to
    /// the loss, or the handle is an interior node.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Computes `d loss / d v` for every node `v` that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.val(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior gradients are released once propagated; only leaves keep theirs.
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut(),
        )
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<T>>],
        v: Var,
        f: impl Fn(usize, T) -> T,
        upstream: &[T],
    ) {
        if let Some(d) = self.slot(grads, v) {
            for (i, (d, &g)) in d.iter_mut().zip(upstream).enumerate() {
                *d += f(i, g);
            }
        }
    }

    fn zeros_like_if_needed(&self, v: Var) -> Option<Vec<T>> {
        let node = &self.nodes[v.0];
        node.requires_grad.then(|| vec![T::zero(); node.value.numel()])
    }

    /// Inputs of one op may alias the same node, so their contributions are
    /// computed into scratch buffers first and added afterwards.
    fn add_into<const N: usize>(
        &self,
        grads: &mut [Option<Tensor<T>>],
        parts: [(Var, Option<Vec<T>>); N],
    ) {
        for (v, d) in parts {
            if let Some(d) = d {
                self.accumulate(grads, v, |_, g| g, &d);
            }
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, geom } => {
                let mut dx = self.zeros_like_if_needed(*x);
                let mut dk = self.zeros_like_if_needed(*k);
                let mut db = self.zeros_like_if_needed(*b);
                kernels::conv2d_backward(
                    geom,
                    self.val(*x).data(),
                    self.val(*k).data(),
                    gd,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.add_into(grads, [(*x, dx), (*k, dk), (*b, db)]);
            }
            Op::Dense { x, w, b, dims } => {
                let [rows, f, gcols] = *dims;
                let mut dx = self.zeros_like_if_needed(*x);
                let mut dw = self.zeros_like_if_needed(*w);
                let mut db = self.zeros_like_if_needed(*b);
                kernels::dense_backward(
                    self.val(*x).data(),
                    self.val(*w).data(),
                    gd,
                    rows,
                    f,
                    gcols,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.add_into(grads, [(*x, dx), (*w, dw), (*b, db)]);
            }
            Op::LeakyRelu { x, leak } => {
                let xv = self.val(*x).data();
                let leak = *leak;
                self.accumulate(
                    grads,
                    *x,
                    |i, g| if xv[i] >= T::zero() { g } else { leak * g },
                    gd,
                );
            }
            Op::Upsample { x, factor } => {
                let dims = self.val(*x).dims4("upsample_nearest").expect("recorded NCHW");
                if let Some(d) = self.slot(grads, *x) {
                    kernels::upsample_nearest_backward(gd, dims, *factor, d);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        d[src] += gv;
                    }
                }
            }
            Op::Concat { parts, channels } => {
                let shape = node.value.shape();
                let (n, total, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for (&p, &pc) in parts.iter().zip(channels) {
                    if let Some(d) = self.slot(grads, p) {
                        for ni in 0..n {
                            let src = &gd[(ni * total + offset) * hw..(ni * total + offset + pc) * hw];
                            let dst = &mut d[ni * pc * hw..(ni + 1) * pc * hw];
                            for (dv, &sv) in dst.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |_, g| g, gd);
                self.accumulate(grads, *b, |_, g| g, gd);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |_, g| g, gd);
                self.accumulate(grads, *b, |_, g| -g, gd);
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                self.accumulate(grads, *x, |_, g| g * f, gd);
            }
            Op::SubScalar { x, s } => {
                self.accumulate(grads, *x, |_, g| g, gd);
                if let Some(d) = self.slot(grads, *s) {
                    d[0] = d[0] - gd.iter().copied().sum::<T>();
                }
            }
            Op::Abs { x } => {
                let xv = self.val(*x).data();
                self.accumulate(grads, *x, |i, g| g * kernels::sign(xv[i]), gd);
            }
            Op::Square { x } => {
                let xv = self.val(*x).data();
                let two = T::from_f64(2.0);
                self.accumulate(grads, *x, |i, g| g * two * xv[i], gd);
            }
            Op::Softplus { x } => {
                let xv = self.val(*x).data();
                self.accumulate(grads, *x, |i, g| g * kernels::sigmoid(xv[i]), gd);
            }
            Op::Mean { x } => {
                let n = T::from_f64(self.val(*x).numel() as f64);
                let g0 = gd[0] / n;
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|v| *v += g0);
                }
            }
            Op::Sum { x } => {
                let g0 = gd[0];
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|v| *v += g0);
                }
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, |_, g| g, gd);
            }
            Op::Gram { x, dims } => {
                let [n, c, hw] = *dims;
                let xv = self.val(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    kernels::gram_backward(xv, gd, n, c, hw, d);
                }
            }
        }
    }
}

impl<T: Real> Ops<T> for Graph<T> {
    type V = Var;

    fn leaf(&mut self, t: &Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: t.clone(),
            op: Op::Leaf,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn conv2d(&mut self, x: &Var, k: &Var, b: &Var, stride: usize, pad: usize) -> Result<Var> {
        let (out, geom) = ops::conv2d_fwd(self.val(*x), self.val(*k), self.val(*b), stride, pad)?;
        Ok(self.push(out, Op::Conv2d { x: *x, k: *k, b: *b, geom }, &[*x, *k, *b]))
    }

    fn dense(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let (out, dims) = ops::dense_fwd(self.val(*x), self.val(*w), self.val(*b))?;
        Ok(self.push(out, Op::Dense { x: *x, w: *w, b: *b, dims }, &[*x, *w, *b]))
    }

    fn leaky_relu(&mut self, x: &Var, leak: f64) -> Result<Var> {
        ops::check_leak(leak)?;
        let leak = T::from_f64(leak);
        let out = self.val(*x).map(|v| kernels::leaky_relu(v, leak));
        Ok(self.push(out, Op::LeakyRelu { x: *x, leak }, &[*x]))
    }

    fn upsample_nearest(&mut self, x: &Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_fwd(self.val(*x), factor)?;
        Ok(self.push(out, Op::Upsample { x: *x, factor }, &[*x]))
    }

    fn max_pool(&mut self, x: &Var, size: usize) -> Result<Var> {
        let (out, argmax) = ops::max_pool_fwd(self.val(*x), size)?;
        Ok(self.push(out, Op::MaxPool { x: *x, argmax }, &[*x]))
    }

    fn concat_channels(&mut self, parts: &[&Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|v| self.val(**v)).collect();
        let (out, channels) = ops::concat_fwd(&tensors)?;
        let parts: Vec<Var> = parts.iter().map(|v| **v).collect();
        let inputs = parts.clone();
        Ok(self.push(out, Op::Concat { parts, channels }, &inputs))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::zip_fwd("add", self.val(*a), self.val(*b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a: *a, b: *b }, &[*a, *b]))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::zip_fwd("sub", self.val(*a), self.val(*b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a: *a, b: *b }, &[*a, *b]))
    }

    fn scale(&mut self, x: &Var, factor: f64) -> Var {
        let factor = T::from_f64(factor);
        let out = self.val(*x).map(|v| v * factor);
        self.push(out, Op::Scale { x: *x, factor }, &[*x])
    }

    fn sub_scalar(&mut self, x: &Var, s: &Var) -> Result<Var> {
        let sv = ops::scalar_of("sub_scalar", self.val(*s))?;
        let out = self.val(*x).map(|v| v - sv);
        Ok(self.push(out, Op::SubScalar { x: *x, s: *s }, &[*x, *s]))
    }

    fn abs(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(|v| v.abs());
        self.push(out, Op::Abs { x: *x }, &[*x])
    }

    fn square(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(|v| v * v);
        self.push(out, Op::Square { x: *x }, &[*x])
    }

    fn softplus(&mut self, x: &Var) -> Var {
        let out = self.val(*x).map(kernels::softplus);
        self.push(out, Op::Softplus { x: *x }, &[*x])
    }

    fn mean(&mut self, x: &Var) -> Result<Var> {
        let out = ops::mean_fwd(self.val(*x))?;
        Ok(self.push(out, Op::Mean { x: *x }, &[*x]))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let out = Tensor::scalar(self.val(*x).data().iter().copied().sum());
        self.push(out, Op::Sum { x: *x }, &[*x])
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(*x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x: *x }, &[*x]))
    }

    fn gram(&mut self, x: &Var) -> Result<Var> {
        let (out, dims) = ops::gram_fwd(self.val(*x))?;
        Ok(self.push(out, Op::Gram { x: *x, dims }, &[*x]))
    }

    fn detach(&mut self, x: &Var) -> Var {
        let t = self.val(*x).clone();
        self.leaf(&t, false)
    }
}

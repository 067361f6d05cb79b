//! The operation set shared by gradient-recording and eager evaluation.
//!
//! Models and losses are written once against [`Ops`]; the
//! [`Graph`](crate::autodiff::Graph) implementation records a tape for
//! reverse-mode differentiation, while [`Eval`] computes values only and
//! drops intermediates as soon as the caller does.

use alloc::vec::Vec;

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

pub trait Ops<T: Real> {
    type V: Clone;

    /// Introduces a tensor. `trainable` leaves receive gradients.
    fn leaf(&mut self, t: &Tensor<T>, trainable: bool) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::V,
        kernel: &Self::V,
        bias: &Self::V,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V>;
    fn dense(&mut self, x: &Self::V, weight: &Self::V, bias: &Self::V) -> Result<Self::V>;
    fn leaky_relu(&mut self, x: &Self::V, leak: f64) -> Result<Self::V>;
    fn upsample_nearest(&mut self, x: &Self::V, factor: usize) -> Result<Self::V>;
    fn max_pool(&mut self, x: &Self::V, size: usize) -> Result<Self::V>;
    fn concat_channels(&mut self, parts: &[&Self::V]) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, x: &Self::V, factor: f64) -> Self::V;
    /// Subtracts a one-element tensor from every element of `x`.
    fn sub_scalar(&mut self, x: &Self::V, s: &Self::V) -> Result<Self::V>;
    fn abs(&mut self, x: &Self::V) -> Self::V;
    fn square(&mut self, x: &Self::V) -> Self::V;
    fn softplus(&mut self, x: &Self::V) -> Self::V;
    /// Arithmetic mean of all elements; empty input is rejected.
    fn mean(&mut self, x: &Self::V) -> Result<Self::V>;
    fn sum(&mut self, x: &Self::V) -> Self::V;
    fn reshape(&mut self, x: &Self::V, shape: &[usize]) -> Result<Self::V>;
    /// Flattens NCHW (or any rank >= 2) to `N x rest`.
    fn flatten(&mut self, x: &Self::V) -> Result<Self::V> {
        let shape = self.value(x).shape().to_vec();
        let Some((&n, rest)) = shape.split_first() else {
            return Err(shape_err!("flatten", "cannot flatten a scalar"));
        };
        let f = rest.iter().product();
        self.reshape(x, &[n, f])
    }
    /// Per-sample channel Gram matrix normalized by `C*H*W`.
    fn gram(&mut self, x: &Self::V) -> Result<Self::V>;
    /// Same value, cut from the gradient tape.
    fn detach(&mut self, x: &Self::V) -> Self::V;
}

pub(crate) fn conv2d_fwd<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvGeom)> {
    let g = ConvGeom::new(x.shape(), k.shape(), b.shape(), stride, pad)?;
    let out = kernels::conv2d_forward(&g, x.data(), k.data(), b.data());
    Ok((Tensor::new(g.out_shape(), out)?, g))
}

pub(crate) fn dense_fwd<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, [usize; 3])> {
    let (rows, f) = x.dims2("dense")?;
    let (wf, g) = w.dims2("dense")?;
    if wf != f {
        return Err(shape_err!(
            "dense",
            "input has {} features but weight is {}x{}",
            f,
            wf,
            g
        ));
    }
    if b.shape() != [g] {
        return Err(shape_err!(
            "dense",
            "bias shape {:?} does not match {} outputs",
            b.shape(),
            g
        ));
    }
    let out = kernels::dense_forward(x.data(), w.data(), b.data(), rows, f, g);
    Ok((Tensor::new([rows, g], out)?, [rows, f, g]))
}

pub(crate) fn check_leak(leak: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&leak) {
        return Err(arg_err!("leaky_relu", "leak {} outside [0, 1]", leak));
    }
    Ok(())
}

pub(crate) fn upsample_fwd<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(arg_err!("upsample_nearest", "factor must be >= 1, got {}", factor));
    }
    let (n, c, h, w) = x.dims4("upsample_nearest")?;
    let out = kernels::upsample_nearest_forward(x.data(), (n, c, h, w), factor);
    Tensor::new([n, c, h * factor, w * factor], out)
}

pub(crate) fn max_pool_fwd<T: Real>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4("max_pool")?;
    if size == 0 || h < size || w < size {
        return Err(shape_err!(
            "max_pool",
            "window {} does not fit {}x{} input",
            size,
            h,
            w
        ));
    }
    let (out, arg) = kernels::max_pool_forward(x.data(), (n, c, h, w), size);
    Ok((Tensor::new([n, c, h / size, w / size], out)?, arg))
}

/// Returns the concatenation and each part's channel count.
pub(crate) fn concat_fwd<T: Real>(parts: &[&Tensor<T>]) -> Result<(Tensor<T>, Vec<usize>)> {
    let Some(first) = parts.first() else {
        return Err(arg_err!("concat_channels", "no inputs"));
    };
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err!(
                "concat_channels",
                "cannot join {:?} with {:?}",
                first.shape(),
                p.shape()
            ));
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let mut out = Vec::with_capacity(n * total * h * w);
    for ni in 0..n {
        for (p, &pc) in parts.iter().zip(&channels) {
            out.extend_from_slice(&p.data()[ni * pc * h * w..(ni + 1) * pc * h * w]);
        }
    }
    Ok((Tensor::new([n, total, h, w], out)?, channels))
}

pub(crate) fn zip_fwd<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err!(op, "{:?} vs {:?}", a.shape(), b.shape()));
    }
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn scalar_of<T: Real>(op: &'static str, s: &Tensor<T>) -> Result<T> {
    s.item()
        .ok_or_else(|| shape_err!(op, "expected a one-element tensor, got {:?}", s.shape()))
}

pub(crate) fn mean_fwd<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.numel() == 0 {
        return Err(arg_err!("mean", "mean of an empty tensor"));
    }
    let s: T = x.data().iter().copied().sum();
    Ok(Tensor::scalar(s / T::from_f64(x.numel() as f64)))
}

pub(crate) fn gram_fwd<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, [usize; 3])> {
    let (n, c, h, w) = x.dims4("gram")?;
    let out = kernels::gram_forward(x.data(), n, c, h * w);
    Ok((Tensor::new([n, c, c], out)?, [n, c, h * w]))
}

/// Eager evaluation without a tape.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl<T: Real> Ops<T> for Eval {
    type V = Tensor<T>;

    fn leaf(&mut self, t: &Tensor<T>, _trainable: bool) -> Tensor<T> {
        t.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        conv2d_fwd(x, kernel, bias, stride, pad).map(|(t, _)| t)
    }

    fn dense(&mut self, x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        dense_fwd(x, weight, bias).map(|(t, _)| t)
    }

    fn leaky_relu(&mut self, x: &Tensor<T>, leak: f64) -> Result<Tensor<T>> {
        check_leak(leak)?;
        let leak = T::from_f64(leak);
        Ok(x.map(|v| kernels::leaky_relu(v, leak)))
    }

    fn upsample_nearest(&mut self, x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
        upsample_fwd(x, factor)
    }

    fn max_pool(&mut self, x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
        max_pool_fwd(x, size).map(|(t, _)| t)
    }

    fn concat_channels(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        concat_fwd(parts).map(|(t, _)| t)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        zip_fwd("add", a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        zip_fwd("sub", a, b, |x, y| x - y)
    }

    fn scale(&mut self, x: &Tensor<T>, factor: f64) -> Tensor<T> {
        let f = T::from_f64(factor);
        x.map(|v| v * f)
    }

    fn sub_scalar(&mut self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        let s = scalar_of("sub_scalar", s)?;
        Ok(x.map(|v| v - s))
    }

    fn abs(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.abs())
    }

    fn square(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v * v)
    }

    fn softplus(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.map(kernels::softplus)
    }

    fn mean(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        mean_fwd(x)
    }

    fn sum(&mut self, x: &Tensor<T>) -> Tensor<T> {
        Tensor::scalar(x.data().iter().copied().sum())
    }

    fn reshape(&mut self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.clone().reshape(shape)
    }

    fn gram(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        gram_fwd(x).map(|(t, _)| t)
    }

    fn detach(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.clone()
    }
}

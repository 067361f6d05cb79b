//! Raw forward and backward kernels on flat buffers.
//!
//! All reductions run sequentially in index order, so results are
//! reproducible bit-for-bit for a given input.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;

/// Resolved geometry of a 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, c, h, w] = *input else {
            return Err(shape_err!("conv2d", "input must be NCHW, got {:?}", input));
        };
        let [o, i, kh, kw] = *kernel else {
            return Err(shape_err!("conv2d", "kernel must be OIHW, got {:?}", kernel));
        };
        if stride == 0 {
            return Err(arg_err!("conv2d", "stride must be at least 1"));
        }
        if i != c {
            return Err(shape_err!(
                "conv2d",
                "input has {} channels but kernel {:?} expects {}",
                c,
                kernel,
                i
            ));
        }
        if bias != [o] {
            return Err(shape_err!(
                "conv2d",
                "bias shape {:?} does not match {} output channels",
                bias,
                o
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err!(
                "conv2d",
                "kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.oh, self.ow]
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 stride-1 unpadded kernels read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox*stride + kj - pad` is in range.
    fn valid_range(&self, k: usize, out: usize, size: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(s)
        };
        // largest ox with ox*s + k - pad <= size - 1
        let hi = if size + self.pad > k {
            ((size + self.pad - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.p();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.valid_range(ki, g.oh, g.h);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.valid_range(kj, g.ow, g.w);
                let row = &mut col[((ci * g.kh + ki) * g.kw + kj) * p..][..p];
                row.fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = xlo + kj - g.pad;
                        dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.p();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.valid_range(ki, g.oh, g.h);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.valid_range(kj, g.ow, g.w);
                let row = &col[((ci * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xlo..xhi {
                        dst[ox * g.stride + kj - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` with `kernel`, plus `bias`. Output is NOHW.
pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![T::zero(); g.n * g.o * p];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for ni in 0..g.n {
        let xn = &x[ni * g.c * g.h * g.w..(ni + 1) * g.c * g.h * g.w];
        let on = &mut out[ni * g.o * p..(ni + 1) * g.o * p];
        for (oc, row) in on.chunks_exact_mut(p).enumerate() {
            row.fill(bias[oc]);
        }
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        T::gemm(
            g.o,
            k,
            p,
            T::one(),
            kernel,
            k as isize,
            1,
            cols,
            p as isize,
            1,
            T::one(),
            on,
            p as isize,
            1,
        );
    }
    out
}

/// Accumulates convolution gradients into whichever of `dx`, `dkernel`,
/// `dbias` are requested.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    grad_out: &[T],
    mut dx: Option<&mut [T]>,
    mut dkernel: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let (k, p) = (g.k(), g.p());
    let chw = g.c * g.h * g.w;
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for ni in 0..g.n {
        let gn = &grad_out[ni * g.o * p..(ni + 1) * g.o * p];
        if let Some(db) = dbias.as_deref_mut() {
            for (oc, row) in gn.chunks_exact(p).enumerate() {
                db[oc] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dk) = dkernel.as_deref_mut() {
            let xn = &x[ni * chw..(ni + 1) * chw];
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, g, &mut col);
                &col
            };
            // dK (o x k) += G (o x p) * cols^T (p x k)
            T::gemm(
                g.o,
                p,
                k,
                T::one(),
                gn,
                p as isize,
                1,
                cols,
                1,
                p as isize,
                T::one(),
                dk,
                k as isize,
                1,
            );
        }
        if let Some(dxa) = dx.as_deref_mut() {
            let dxn = &mut dxa[ni * chw..(ni + 1) * chw];
            if g.is_pointwise() {
                T::gemm(
                    k,
                    g.o,
                    p,
                    T::one(),
                    kernel,
                    1,
                    k as isize,
                    gn,
                    p as isize,
                    1,
                    T::one(),
                    dxn,
                    p as isize,
                    1,
                );
            } else {
                // dcols (k x p) = K^T (k x o) * G (o x p)
                T::gemm(
                    k,
                    g.o,
                    p,
                    T::one(),
                    kernel,
                    1,
                    k as isize,
                    gn,
                    p as isize,
                    1,
                    T::zero(),
                    &mut col,
                    p as isize,
                    1,
                );
                col2im_add(&col, g, dxn);
            }
        }
    }
}

pub fn upsample_nearest_forward<T: Real>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    factor: usize,
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks_exact(h * w).take(n * c) {
        for oy in 0..oh {
            let src = &plane[(oy / factor) * w..(oy / factor + 1) * w];
            for ox in 0..ow {
                out.push(src[ox / factor]);
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Real>(
    grad_out: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    factor: usize,
    dx: &mut [T],
) {
    let (oh, ow) = (h * factor, w * factor);
    for (gp, dp) in grad_out
        .chunks_exact(oh * ow)
        .zip(dx.chunks_exact_mut(h * w))
        .take(n * c)
    {
        for oy in 0..oh {
            let drow = &mut dp[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, &gv) in gp[oy * ow..(oy + 1) * ow].iter().enumerate() {
                drow[ox / factor] += gv;
            }
        }
    }
}

/// Non-overlapping max pooling with window and stride `size`. Returns the
/// pooled values and, per output, the flat input index that won.
pub fn max_pool_forward<T: Real>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    size: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for pi in 0..n * c {
        let base = pi * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * size * w + ox * size;
                let mut best = x[best_idx];
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

/// `x (rows x f) * weight (f x g) + bias (g)`.
pub fn dense_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    rows: usize,
    f: usize,
    g: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * g);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    T::gemm(
        rows,
        f,
        g,
        T::one(),
        x,
        f as isize,
        1,
        weight,
        g as isize,
        1,
        T::one(),
        &mut out,
        g as isize,
        1,
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    rows: usize,
    f: usize,
    g: usize,
    dx: Option<&mut [T]>,
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    if let Some(dx) = dx {
        // dx (rows x f) += G (rows x g) * W^T (g x f)
        T::gemm(
            rows,
            g,
            f,
            T::one(),
            grad_out,
            g as isize,
            1,
            weight,
            1,
            g as isize,
            T::one(),
            dx,
            f as isize,
            1,
        );
    }
    if let Some(dw) = dweight {
        // dW (f x g) += X^T (f x rows) * G (rows x g)
        T::gemm(
            f,
            rows,
            g,
            T::one(),
            x,
            1,
            f as isize,
            grad_out,
            g as isize,
            1,
            T::one(),
            dw,
            g as isize,
            1,
        );
    }
    if let Some(db) = dbias {
        for row in grad_out.chunks_exact(g).take(rows) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
}

/// Per-sample `F F^T / (c*h*w)` for features `F` of shape `c x (h*w)`.
pub fn gram_forward<T: Real>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let norm = T::one() / T::from_f64((c * hw) as f64);
    let mut out = vec![T::zero(); n * c * c];
    for ni in 0..n {
        let f = &x[ni * c * hw..(ni + 1) * c * hw];
        T::gemm(
            c,
            hw,
            c,
            norm,
            f,
            hw as isize,
            1,
            f,
            1,
            hw as isize,
            T::zero(),
            &mut out[ni * c * c..(ni + 1) * c * c],
            c as isize,
            1,
        );
    }
    out
}

pub fn gram_backward<T: Real>(x: &[T], grad_out: &[T], n: usize, c: usize, hw: usize, dx: &mut [T]) {
    let norm = T::one() / T::from_f64((c * hw) as f64);
    let mut sym = vec![T::zero(); c * c];
    for ni in 0..n {
        let gn = &grad_out[ni * c * c..(ni + 1) * c * c];
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = gn[i * c + j] + gn[j * c + i];
            }
        }
        let f = &x[ni * c * hw..(ni + 1) * c * hw];
        T::gemm(
            c,
            c,
            hw,
            norm,
            &sym,
            c as isize,
            1,
            f,
            hw as isize,
            1,
            T::one(),
            &mut dx[ni * c * hw..(ni + 1) * c * hw],
            hw as isize,
            1,
        );
    }
}

#[inline]
pub fn leaky_relu<T: Real>(v: T, leak: T) -> T {
    if v >= T::zero() {
        v
    } else {
        leak * v
    }
}

/// `ln(1 + e^v)` without overflow for large `|v|`.
#[inline]
pub fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

//! Single-channel images with values nominally in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!(
                "image",
                "{}x{} image needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    /// True when every value is finite and inside `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(shape_err!(
                "crop",
                "{}x{} window at ({}, {}) exceeds {}x{} image",
                height,
                width,
                row,
                col,
                self.height,
                self.width
            ));
        }
        Ok(Self::from_fn(height, width, |r, c| self.get(row + r, col + c)))
    }

    /// Mirrors columns.
    pub fn hflip(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    /// Mirrors rows.
    pub fn vflip(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(self.height - 1 - r, c))
    }

    /// Quarter turn counterclockwise; an `H x W` image becomes `W x H`.
    pub fn rot90_ccw(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, self.width - 1 - r))
    }

    /// Mean over non-overlapping 2x2 blocks.
    pub fn box_downsample2(&self) -> Result<Self> {
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(arg_err!(
                "box_downsample2",
                "dimensions {}x{} must be even",
                self.height,
                self.width
            ));
        }
        Ok(Self::from_fn(self.height / 2, self.width / 2, |r, c| {
            let (r2, c2) = (2 * r, 2 * c);
            (self.get(r2, c2) + self.get(r2, c2 + 1) + self.get(r2 + 1, c2) + self.get(r2 + 1, c2 + 1)) * 0.25
        }))
    }

    /// 2x cubic-convolution upsampling (a = -0.5) with half-pixel sample
    /// centers and clamp-to-edge borders. Output is not clamped.
    pub fn bicubic_upsample2(&self) -> Result<Self> {
        if self.height == 0 || self.width == 0 {
            return Err(arg_err!("bicubic_upsample2", "empty image"));
        }
        let (h, w) = (self.height, self.width);
        let cols = taps(w, 2 * w);
        let rows = taps(h, 2 * h);
        let mut tmp = vec![0.0f64; h * 2 * w];
        for r in 0..h {
            for (oc, (idx, wt)) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * f64::from(self.get(r, idx[k]));
                }
                tmp[r * 2 * w + oc] = acc;
            }
        }
        let mut out = Self::zeros(2 * h, 2 * w);
        for (or, (idx, wt)) in rows.iter().enumerate() {
            for c in 0..2 * w {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * tmp[idx[k] * 2 * w + c];
                }
                out.set(or, c, acc as f32);
            }
        }
        Ok(out)
    }

    /// `1 x 1 x H x W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| T::from_f64(f64::from(self.data[i])))
    }

    /// Image `index` of an `N x 1 x H x W` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4("image from tensor")?;
        if c != 1 || index >= n {
            return Err(shape_err!(
                "image from tensor",
                "cannot take image {} of a {:?} batch",
                index,
                t.shape()
            ));
        }
        let plane = &t.data()[index * h * w..(index + 1) * h * w];
        Self::new(h, w, plane.iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Catmull-Rom style cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = Float::abs(x);
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source indices and weights of the four taps for each output sample.
fn taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = (o as f64 + 0.5) * ratio - 0.5;
            let base = Float::floor(x);
            let t = x - base;
            let mut idx = [0usize; 4];
            let mut wt = [0.0; 4];
            for k in 0..4 {
                let s = base as isize - 1 + k as isize;
                idx[k] = s.clamp(0, src as isize - 1) as usize;
                wt[k] = cubic_kernel(t - (k as f64 - 1.0));
            }
            (idx, wt)
        })
        .collect()
}

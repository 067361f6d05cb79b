//! PSNR and SSIM on grayscale images.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{arg_err, shape_err, Result};
use crate::image::GrayImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Quality of one restored image against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub image_id: String,
    /// `+inf` for a perfect reconstruction.
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(image_id: impl Into<String>, output: &GrayImage, truth: &GrayImage) -> Result<Self> {
        Ok(Self {
            image_id: image_id.into(),
            psnr_db: psnr(output, truth, 1.0)?,
            ssim: ssim(output, truth, 1.0)?,
        })
    }
}

fn same_dims(op: &'static str, x: &GrayImage, y: &GrayImage) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(shape_err!(op, "{:?} vs {:?}", x.dims(), y.dims()));
    }
    Ok(())
}

pub fn mse(x: &GrayImage, y: &GrayImage) -> Result<f64> {
    same_dims("mse", x, y)?;
    if x.data().is_empty() {
        return Err(arg_err!("mse", "empty images"));
    }
    let s: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(s / x.data().len() as f64)
}

/// `10 log10(max_val^2 / MSE)` in decibels; `+inf` when the images match.
pub fn psnr(x: &GrayImage, y: &GrayImage, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(arg_err!("psnr", "max_val must be positive, got {}", max_val));
    }
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * Float::log10(max_val * max_val / m))
}

/// Normalized 1-d Gaussian taps; the 2-d window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            Float::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Gaussian-filters `img` over fully contained windows only.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, averaged over all windows inside the image.
pub fn ssim(x: &GrayImage, y: &GrayImage, max_val: f64) -> Result<f64> {
    same_dims("ssim", x, y)?;
    if !(max_val > 0.0) {
        return Err(arg_err!("ssim", "max_val must be positive, got {}", max_val));
    }
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(arg_err!(
            "ssim",
            "{}x{} image is smaller than the {}x{} window",
            h,
            w,
            SSIM_WINDOW,
            SSIM_WINDOW
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let xf: Vec<f64> = x.data().iter().map(|&v| f64::from(v)).collect();
    let yf: Vec<f64> = y.data().iter().map(|&v| f64::from(v)).collect();
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = filter_valid(&xf, h, w, &taps);
    let my = filter_valid(&yf, h, w, &taps);
    let sxx = filter_valid(&prod(&xf, &xf), h, w, &taps);
    let syy = filter_valid(&prod(&yf, &yf), h, w, &taps);
    let sxy = filter_valid(&prod(&xf, &yf), h, w, &taps);
    let c1 = (SSIM_K1 * max_val) * (SSIM_K1 * max_val);
    let c2 = (SSIM_K2 * max_val) * (SSIM_K2 * max_val);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let vx = sxx[i] - a * a;
        let vy = syy[i] - b * b;
        let cov = sxy[i] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

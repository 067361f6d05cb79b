//! Slow, direct reference implementations used as test oracles. Nothing
//! here calls into the library's kernels.
#![allow(dead_code)]

use fluosr_core::models::{FeatureExtractorConfig, Truncation};
use fluosr_core::{GrayImage, ParamStore, Tensor};

/// NCHW feature maps in plain nested vectors: `[n][c][row][col]`.
pub type Maps = Vec<Vec<Vec<Vec<f64>>>>;

pub fn to_maps(t: &Tensor<f64>) -> Maps {
    let s = t.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let d = t.data();
    (0..n)
        .map(|i| {
            (0..c)
                .map(|j| {
                    (0..h)
                        .map(|r| (0..w).map(|q| d[((i * c + j) * h + r) * w + q]).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn flat(m: &Maps) -> Vec<f64> {
    m.iter().flatten().flatten().flatten().copied().collect()
}

/// Cross-correlation with zero padding, evaluated one output at a time.
pub fn conv2d(x: &Maps, weight: &Tensor<f64>, bias: &Tensor<f64>, stride: usize, pad: usize) -> Maps {
    let ws = weight.shape();
    let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let wt = |o: usize, i: usize, a: usize, b: usize| weight.data()[((o * ic + i) * kh + a) * kw + b];
    let h = x[0][0].len() as isize;
    let w = x[0][0][0].len() as isize;
    let oh = ((h + 2 * pad as isize - kh as isize) / stride as isize + 1) as usize;
    let ow = ((w + 2 * pad as isize - kw as isize) / stride as isize + 1) as usize;
    x.iter()
        .map(|img| {
            (0..oc)
                .map(|o| {
                    (0..oh)
                        .map(|r| {
                            (0..ow)
                                .map(|q| {
                                    let mut acc = bias.data()[o];
                                    for i in 0..ic {
                                        for a in 0..kh {
                                            for b in 0..kw {
                                                let y = (r * stride + a) as isize - pad as isize;
                                                let z = (q * stride + b) as isize - pad as isize;
                                                if y >= 0 && y < h && z >= 0 && z < w {
                                                    acc += wt(o, i, a, b) * img[i][y as usize][z as usize];
                                                }
                                            }
                                        }
                                    }
                                    acc
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Maps) -> Maps {
    x.iter()
        .map(|i| i.iter().map(|c| c.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()).collect())
        .collect()
}

pub fn max_pool2(x: &Maps) -> Maps {
    x.iter()
        .map(|i| {
            i.iter()
                .map(|c| {
                    (0..c.len() / 2)
                        .map(|r| {
                            (0..c[0].len() / 2)
                                .map(|q| {
                                    let mut m = f64::NEG_INFINITY;
                                    for a in 0..2 {
                                        for b in 0..2 {
                                            m = m.max(c[2 * r + a][2 * q + b]);
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// VGG-style stack: 3x3 pad-1 convs, ReLU between them, 2x2 max pooling
/// between blocks, output taken before the activation of the last conv.
pub fn extract(params: &ParamStore<f64>, config: &FeatureExtractorConfig, x: &Maps) -> Maps {
    let Truncation::Conv { block, conv } = config.truncation else {
        return x.clone();
    };
    let mut h = x.clone();
    for b in 1..=block {
        if b > 1 {
            h = max_pool2(&h);
        }
        let n = if b == block { conv } else { config.blocks[b - 1].0 };
        for k in 1..=n {
            let w = params.get(&format!("conv{b}_{k}.weight")).unwrap();
            let bias = params.get(&format!("conv{b}_{k}.bias")).unwrap();
            h = conv2d(&h, w, bias, 1, 1);
            if b == block && k == n {
                return h;
            }
            h = relu(&h);
        }
    }
    unreachable!()
}

/// Per-sample `G[i][j] = sum_p F_i(p) F_j(p) / (C H W)`, flattened.
pub fn gram(x: &Maps) -> Vec<f64> {
    let mut out = Vec::new();
    for img in x {
        let c = img.len();
        let hw = img[0].len() * img[0][0].len();
        for i in 0..c {
            for j in 0..c {
                let mut s = 0.0;
                for r in 0..img[0].len() {
                    for q in 0..img[0][0].len() {
                        s += img[i][r][q] * img[j][r][q];
                    }
                }
                out.push(s / (c * hw) as f64);
            }
        }
    }
    out
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(L_G, L_D)` written with `-ln(sigmoid)` exactly as the defining
/// expectations, no stabilization.
pub fn rad_direct(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let (mr, mf) = (mean(real), mean(fake));
    let d_real: Vec<f64> = real.iter().map(|&c| sigmoid(c - mf)).collect();
    let d_fake: Vec<f64> = fake.iter().map(|&c| sigmoid(c - mr)).collect();
    let lg = -mean(&d_real.iter().map(|d| (1.0 - d).ln()).collect::<Vec<_>>())
        - mean(&d_fake.iter().map(|d| d.ln()).collect::<Vec<_>>());
    let ld = -mean(&d_real.iter().map(|d| d.ln()).collect::<Vec<_>>())
        - mean(&d_fake.iter().map(|d| (1.0 - d).ln()).collect::<Vec<_>>());
    (lg, ld)
}

fn pixels(img: &GrayImage) -> Vec<f64> {
    img.data().iter().map(|&v| f64::from(v)).collect()
}

pub fn psnr(x: &GrayImage, y: &GrayImage) -> f64 {
    let m = l2(&pixels(x), &pixels(y));
    if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    }
}

/// Mean SSIM over every fully contained 11x11 window, each window weighted
/// by a 2-d Gaussian (sigma 1.5) normalized over the window; data range 1.
pub fn ssim(x: &GrayImage, y: &GrayImage) -> f64 {
    const K: usize = 11;
    let (h, w) = x.dims();
    let (a, b) = (pixels(x), pixels(y));
    let mut win = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=h - K {
        for c in 0..=w - K {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let g = win[i][j] / total;
                    let p = (r + i) * w + c + j;
                    mx += g * a[p];
                    my += g * b[p];
                }
            }
            for i in 0..K {
                for j in 0..K {
                    let g = win[i][j] / total;
                    let p = (r + i) * w + c + j;
                    sxx += g * (a[p] - mx) * (a[p] - mx);
                    syy += g * (b[p] - my) * (b[p] - my);
                    sxy += g * (a[p] - mx) * (b[p] - my);
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Trainable weight and bias count of a 3x3 conv.
pub fn conv3_params(in_c: usize, out_c: usize) -> usize {
    in_c * out_c * 9 + out_c
}

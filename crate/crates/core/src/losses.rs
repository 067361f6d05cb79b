//! Pixel, perceptual, texture and relativistic adversarial losses.

use core::fmt;
use core::str::FromStr;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::models::{feature_extract, FeatureExtractorConfig};
use crate::ops::{Eval, Ops};
use crate::params::Bound;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            _ => Err(arg_err!("norm", "expected `l1` or `l2`, got `{}`", s)),
        }
    }
}

/// Coefficients of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub pixel_norm: Norm,
    pub perceptual_norm: Norm,
    /// Replace the perceptual term by the Gram-matrix texture term.
    pub use_texture_instead_of_perceptual: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 1e-2,
            perceptual: 1e-2,
            adversarial: 1.0,
            pixel_norm: Norm::L1,
            perceptual_norm: Norm::L1,
            use_texture_instead_of_perceptual: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("pixel", self.pixel),
            ("perceptual", self.perceptual),
            ("adversarial", self.adversarial),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(arg_err!("loss weights", "{} weight {} must be finite and >= 0", name, w));
            }
        }
        Ok(())
    }
}

fn same_shape<T: Real, O: Ops<T>>(ops: &O, op: &'static str, x: &O::V, y: &O::V) -> Result<()> {
    let (a, b) = (ops.value(x).shape(), ops.value(y).shape());
    if a != b {
        return Err(shape_err!(op, "{:?} vs {:?}", a, b));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, y: &O::V) -> Result<O::V> {
    same_shape(ops, "l1_loss", x, y)?;
    let d = ops.sub(x, y)?;
    let a = ops.abs(&d);
    ops.mean(&a)
}

/// Mean squared difference.
pub fn l2_loss<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, y: &O::V) -> Result<O::V> {
    same_shape(ops, "l2_loss", x, y)?;
    let d = ops.sub(x, y)?;
    let s = ops.square(&d);
    ops.mean(&s)
}

pub fn pixel_loss<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, y: &O::V, norm: Norm) -> Result<O::V> {
    match norm {
        Norm::L1 => l1_loss(ops, x, y),
        Norm::L2 => l2_loss(ops, x, y),
    }
}

/// A bound, frozen feature extractor.
pub struct Extractor<'a, V> {
    pub config: &'a FeatureExtractorConfig,
    pub params: &'a Bound<V>,
}

impl<V> Clone for Extractor<'_, V> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<V> Copy for Extractor<'_, V> {}

fn feature_pair<T: Real, O: Ops<T>>(
    ops: &mut O,
    ext: Extractor<'_, O::V>,
    sr: &O::V,
    hr: &O::V,
) -> Result<(O::V, O::V)> {
    let fs = feature_extract(ops, ext.params, ext.config, sr)?;
    let fh = feature_extract(ops, ext.params, ext.config, hr)?;
    Ok((fs, fh))
}

/// Pixel-norm distance between extractor features of `sr` and `hr`.
pub fn perceptual_loss<T: Real, O: Ops<T>>(
    ops: &mut O,
    ext: Extractor<'_, O::V>,
    sr: &O::V,
    hr: &O::V,
    norm: Norm,
) -> Result<O::V> {
    same_shape(ops, "perceptual_loss", sr, hr)?;
    let (fs, fh) = feature_pair(ops, ext, sr, hr)?;
    pixel_loss(ops, &fs, &fh, norm)
}

/// Per-sample `F F^T / (C*H*W)` of `N x C x H x W` features.
pub fn gram_matrix<T: Real, O: Ops<T>>(ops: &mut O, features: &O::V) -> Result<O::V> {
    ops.gram(features)
}

/// Pixel-norm distance between Gram matrices of extractor features.
pub fn texture_loss<T: Real, O: Ops<T>>(
    ops: &mut O,
    ext: Extractor<'_, O::V>,
    sr: &O::V,
    hr: &O::V,
    norm: Norm,
) -> Result<O::V> {
    same_shape(ops, "texture_loss", sr, hr)?;
    let (fs, fh) = feature_pair(ops, ext, sr, hr)?;
    let gs = ops.gram(&fs)?;
    let gh = ops.gram(&fh)?;
    pixel_loss(ops, &gs, &gh, norm)
}

/// Relativistic average losses for the generator and the discriminator.
pub struct RadLosses<V> {
    pub generator: V,
    pub discriminator: V,
}

/// Relativistic average GAN losses from raw discriminator logits.
///
/// With `z_r = real - mean(fake)` and `z_f = fake - mean(real)`:
/// `L_G = mean(softplus(z_r)) + mean(softplus(-z_f))` and
/// `L_D = mean(softplus(-z_r)) + mean(softplus(z_f))`. The opposite-class
/// means are detached.
pub fn rad_losses<T: Real, O: Ops<T>>(
    ops: &mut O,
    real_logits: &O::V,
    fake_logits: &O::V,
) -> Result<RadLosses<O::V>> {
    for (side, v) in [("real", real_logits), ("fake", fake_logits)] {
        let t = ops.value(v);
        if t.numel() == 0 {
            return Err(arg_err!("rad_losses", "empty {} batch", side));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite(alloc::format!("{side} logits")));
        }
    }
    let mean_real = ops.mean(real_logits)?;
    let mean_real = ops.detach(&mean_real);
    let mean_fake = ops.mean(fake_logits)?;
    let mean_fake = ops.detach(&mean_fake);
    let z_r = ops.sub_scalar(real_logits, &mean_fake)?;
    let z_f = ops.sub_scalar(fake_logits, &mean_real)?;
    let neg_z_r = ops.scale(&z_r, -1.0);
    let neg_z_f = ops.scale(&z_f, -1.0);

    let sp = ops.softplus(&z_r);
    let g_real = ops.mean(&sp)?;
    let sp = ops.softplus(&neg_z_f);
    let g_fake = ops.mean(&sp)?;
    let generator = ops.add(&g_real, &g_fake)?;

    let sp = ops.softplus(&neg_z_r);
    let d_real = ops.mean(&sp)?;
    let sp = ops.softplus(&z_f);
    let d_fake = ops.mean(&sp)?;
    let discriminator = ops.add(&d_real, &d_fake)?;
    Ok(RadLosses {
        generator,
        discriminator,
    })
}

/// Discriminator logits of one batch with their class means.
#[derive(Debug, Clone, PartialEq)]
pub struct RadBatch<T> {
    pub real_logits: Tensor<T>,
    pub fake_logits: Tensor<T>,
    pub mean_real: T,
    pub mean_fake: T,
}

impl<T: Real> RadBatch<T> {
    pub fn new(real_logits: Tensor<T>, fake_logits: Tensor<T>) -> Result<Self> {
        let mean = |t: &Tensor<T>, side: &str| -> Result<T> {
            if t.numel() == 0 {
                return Err(arg_err!("rad batch", "empty {} batch", side));
            }
            Ok(t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64))
        };
        let mean_real = mean(&real_logits, "real")?;
        let mean_fake = mean(&fake_logits, "fake")?;
        Ok(Self {
            real_logits,
            fake_logits,
            mean_real,
            mean_fake,
        })
    }

    /// `(L_G, L_D)`.
    pub fn losses(&self) -> Result<(T, T)> {
        let mut ev = Eval;
        let l = rad_losses(&mut ev, &self.real_logits, &self.fake_logits)?;
        Ok((scalar(&l.generator), scalar(&l.discriminator)))
    }
}

fn scalar<T: Real>(t: &Tensor<T>) -> T {
    t.item().expect("loss is a scalar")
}

/// Weighted generator objective with its unweighted terms.
pub struct GeneratorLoss<V> {
    pub total: V,
    pub pixel: f64,
    /// Perceptual or texture term, whichever the weights select.
    pub content: f64,
    pub adversarial: f64,
}

/// `pixel_w * pixel + perceptual_w * (perceptual | texture) + adversarial_w * L_G`.
pub fn total_generator_loss<T: Real, O: Ops<T>>(
    ops: &mut O,
    weights: &LossWeights,
    sr: &O::V,
    hr: &O::V,
    real_logits: &O::V,
    fake_logits: &O::V,
    ext: Extractor<'_, O::V>,
) -> Result<GeneratorLoss<O::V>> {
    weights.validate()?;
    let pixel = pixel_loss(ops, sr, hr, weights.pixel_norm)?;
    let content = if weights.use_texture_instead_of_perceptual {
        texture_loss(ops, ext, sr, hr, weights.perceptual_norm)?
    } else {
        perceptual_loss(ops, ext, sr, hr, weights.perceptual_norm)?
    };
    let adv = rad_losses(ops, real_logits, fake_logits)?.generator;

    let read = |ops: &O, v: &O::V| scalar(ops.value(v)).as_f64();
    let (pv, cv, av) = (read(ops, &pixel), read(ops, &content), read(ops, &adv));

    let a = ops.scale(&pixel, weights.pixel);
    let b = ops.scale(&content, weights.perceptual);
    let c = ops.scale(&adv, weights.adversarial);
    let ab = ops.add(&a, &b)?;
    let total = ops.add(&ab, &c)?;
    Ok(GeneratorLoss {
        total,
        pixel: pv,
        content: cv,
        adversarial: av,
    })
}

/// Reads a scalar loss off any [`Ops`] implementation.
pub fn loss_value<T: Real, O: Ops<T>>(ops: &O, v: &O::V) -> f64 {
    ops.value(v).item().map_or(f64::NAN, Real::as_f64)
}

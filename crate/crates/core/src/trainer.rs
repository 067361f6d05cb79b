//! Two-phase training steps: pixel-loss pre-training, then joint
//! generator / discriminator updates.
//!
//! Epoch orchestration, timing, logging and checkpoint files live in the
//! `std` companion crate; this module owns one optimization step at a time.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;

use crate::autodiff::{Gradients, Graph, Var};
use crate::data::{Batch, ImagePair};
use crate::error::{arg_err, Error, Result};
use crate::init::derive_seed;
use crate::losses::{loss_value, pixel_loss, rad_losses, total_generator_loss, Extractor, LossWeights};
use crate::metrics::{psnr, ssim};
use crate::models::{discriminator_forward, generator_forward, DiscriminatorConfig, FeatureExtractorConfig, GeneratorConfig};
use crate::ops::Ops;
use crate::optim::{AdamConfig, AdamStates};
use crate::params::{Bound, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::tiling::upscale;

/// Discriminator loss below which a step counts towards the collapse guard.
pub const COLLAPSE_THRESHOLD: f64 = 1e-6;
/// Consecutive low-loss steps that raise the collapse warning.
pub const COLLAPSE_STEPS: usize = 100;

/// Seed streams derived from the run seed.
pub const GENERATOR_SEED_STREAM: u64 = 0;
pub const DISCRIMINATOR_SEED_STREAM: u64 = 1;
pub const EXTRACTOR_SEED_STREAM: u64 = 2;
pub const SPLIT_SEED_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub lr_initial: f64,
    pub lr_decay_per_epoch: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            phase1_epochs: 50,
            phase2_epochs: 50,
            lr_initial: 1e-4,
            lr_decay_per_epoch: 0.5,
            beta1: 0.9,
            beta2: 0.99,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let op = "train schedule";
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(arg_err!(op, "lr decay {} outside (0, 1]", self.lr_decay_per_epoch));
        }
        if !(self.lr_initial >= 0.0 && self.lr_initial.is_finite()) {
            return Err(arg_err!(op, "initial lr {} must be finite and non-negative", self.lr_initial));
        }
        if self.batch_size == 0 {
            return Err(arg_err!(op, "batch size must be at least 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(arg_err!(op, "{} = {} outside [0, 1)", name, b));
            }
        }
        Ok(())
    }

    /// `lr_initial * decay^epoch`, with `epoch` counted from the start of
    /// the current phase.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let e = i32::try_from(epoch).unwrap_or(i32::MAX);
        self.lr_initial * Float::powi(self.lr_decay_per_epoch, e)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Pretrain => self.phase1_epochs,
            Phase::Gan => self.phase2_epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    /// Generator only, pixel loss only.
    Pretrain,
    /// Generator and discriminator trained side by side.
    Gan,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Pretrain => 1,
            Phase::Gan => 2,
        }
    }

    pub fn from_number(n: u64) -> Result<Self> {
        match n {
            1 => Ok(Phase::Pretrain),
            2 => Ok(Phase::Gan),
            _ => Err(arg_err!("phase", "unknown phase {}", n)),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n = s
            .parse::<u64>()
            .map_err(|_| arg_err!("phase", "expected 1 or 2, got `{}`", s))?;
        Self::from_number(n)
    }
}

/// Unweighted loss terms of one step. Terms the step did not compute are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub phase: Phase,
    pub batch_index: usize,
    pub batch_len: usize,
    pub lr: f64,
    pub pixel: f64,
    /// Perceptual or texture term.
    pub content: Option<f64>,
    pub adversarial_g: Option<f64>,
    pub adversarial_d: Option<f64>,
    pub collapse_warning: bool,
}

/// Mean PSNR / SSIM of clamped outputs over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub psnr: f64,
    pub ssim: f64,
}

/// Networks, optimizer state and loss configuration of a training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub generator_config: GeneratorConfig,
    pub discriminator_config: DiscriminatorConfig,
    pub extractor_config: FeatureExtractorConfig,
    pub weights: LossWeights,
    pub schedule: TrainSchedule,
    pub generator: ParamStore<T>,
    pub generator_adam: AdamStates<T>,
    /// Created when phase 2 starts.
    pub discriminator: Option<ParamStore<T>>,
    pub discriminator_adam: Option<AdamStates<T>>,
    /// Frozen; never updated.
    pub extractor: ParamStore<T>,
    /// Consecutive steps with discriminator loss under [`COLLAPSE_THRESHOLD`].
    pub low_d_streak: usize,
}

fn collect_grads<T: Real>(bound: &Bound<Var>, grads: &mut Gradients<T>) -> BTreeMap<String, Tensor<T>> {
    bound
        .iter()
        .filter_map(|(name, &v)| grads.take(v).map(|g| (String::from(name), g)))
        .collect()
}

fn finite_loss(value: f64, what: &str, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} loss ({value}) at batch {batch}")))
    }
}

impl<T: Real> Trainer<T> {
    /// Fresh generator from the run seed; the extractor weights are given
    /// (seeded-random or loaded) and checked against `extractor_config`.
    pub fn new(
        generator_config: GeneratorConfig,
        discriminator_config: DiscriminatorConfig,
        extractor_config: FeatureExtractorConfig,
        extractor: ParamStore<T>,
        weights: LossWeights,
        schedule: TrainSchedule,
    ) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        discriminator_config.validate()?;
        extractor_config.validate()?;
        extractor_config.check_weights(&extractor)?;
        let generator = generator_config.init(derive_seed(schedule.seed, GENERATOR_SEED_STREAM))?;
        let generator_adam = AdamStates::for_params(&generator);
        Ok(Self {
            generator_config,
            discriminator_config,
            extractor_config,
            weights,
            schedule,
            generator,
            generator_adam,
            discriminator: None,
            discriminator_adam: None,
            extractor,
            low_d_streak: 0,
        })
    }

    /// Initializes the discriminator and resets both optimizers.
    pub fn start_phase2(&mut self) -> Result<()> {
        let disc = self
            .discriminator_config
            .init(derive_seed(self.schedule.seed, DISCRIMINATOR_SEED_STREAM))?;
        self.discriminator_adam = Some(AdamStates::for_params(&disc));
        self.discriminator = Some(disc);
        self.generator_adam = AdamStates::for_params(&self.generator);
        self.low_d_streak = 0;
        Ok(())
    }

    /// One generator update on the weighted pixel loss.
    pub fn pretrain_step(&mut self, batch: &Batch<T>, lr: f64) -> Result<StepReport> {
        let mut g = Graph::new();
        let gp = self.generator.bind(&mut g, true);
        let x = g.leaf(&batch.lr, false);
        let y = g.leaf(&batch.hr, false);
        let sr = generator_forward(&mut g, &gp, &self.generator_config, &x)?;
        let pix = pixel_loss(&mut g, &sr, &y, self.weights.pixel_norm)?;
        let loss = g.scale(&pix, self.weights.pixel);
        let pixel = loss_value(&g, &pix);
        finite_loss(loss_value(&g, &loss), "pixel", batch.index)?;
        let mut grads = g.backward(loss)?;
        let grads = collect_grads(&gp, &mut grads);
        self.generator_adam
            .step(&mut self.generator, &grads, lr, &self.schedule.adam())?;
        Ok(StepReport {
            phase: Phase::Pretrain,
            batch_index: batch.index,
            batch_len: batch.len(),
            lr,
            pixel,
            content: None,
            adversarial_g: None,
            adversarial_d: None,
            collapse_warning: false,
        })
    }

    /// Generator update against the current discriminator, then one
    /// discriminator update on the same real batch and the detached fakes.
    pub fn gan_step(&mut self, batch: &Batch<T>, lr: f64) -> Result<StepReport> {
        let (Some(disc), Some(disc_adam)) = (self.discriminator.as_mut(), self.discriminator_adam.as_mut()) else {
            return Err(arg_err!("gan_step", "discriminator not initialized; call start_phase2 first"));
        };
        let adam = self.schedule.adam();

        let mut g = Graph::new();
        let gp = self.generator.bind(&mut g, true);
        let dp = disc.bind(&mut g, false);
        let ep = self.extractor.bind(&mut g, false);
        let x = g.leaf(&batch.lr, false);
        let y = g.leaf(&batch.hr, false);
        let sr = generator_forward(&mut g, &gp, &self.generator_config, &x)?;
        let real_logits = discriminator_forward(&mut g, &dp, &self.discriminator_config, &y)?;
        let fake_logits = discriminator_forward(&mut g, &dp, &self.discriminator_config, &sr)?;
        let ext = Extractor {
            config: &self.extractor_config,
            params: &ep,
        };
        let terms = total_generator_loss(&mut g, &self.weights, &sr, &y, &real_logits, &fake_logits, ext)?;
        finite_loss(loss_value(&g, &terms.total), "generator", batch.index)?;
        let fake = g.value(&sr).clone();
        let mut grads = g.backward(terms.total)?;
        let grads = collect_grads(&gp, &mut grads);
        drop(g);

        let mut g = Graph::new();
        let dp = disc.bind(&mut g, true);
        let y = g.leaf(&batch.hr, false);
        let f = g.leaf(&fake, false);
        let real_logits = discriminator_forward(&mut g, &dp, &self.discriminator_config, &y)?;
        let fake_logits = discriminator_forward(&mut g, &dp, &self.discriminator_config, &f)?;
        let l_d = rad_losses(&mut g, &real_logits, &fake_logits)?.discriminator;
        let d_value = loss_value(&g, &l_d);
        finite_loss(d_value, "discriminator", batch.index)?;
        let mut dgrads = g.backward(l_d)?;
        let dgrads = collect_grads(&dp, &mut dgrads);

        self.generator_adam.step(&mut self.generator, &grads, lr, &adam)?;
        disc_adam.step(disc, &dgrads, lr, &adam)?;

        if d_value < COLLAPSE_THRESHOLD {
            self.low_d_streak += 1;
        } else {
            self.low_d_streak = 0;
        }
        Ok(StepReport {
            phase: Phase::Gan,
            batch_index: batch.index,
            batch_len: batch.len(),
            lr,
            pixel: terms.pixel,
            content: Some(terms.content),
            adversarial_g: Some(terms.adversarial),
            adversarial_d: Some(d_value),
            collapse_warning: self.low_d_streak >= COLLAPSE_STEPS,
        })
    }

    /// Whole-image PSNR / SSIM of the clamped generator output on `pairs`.
    pub fn validate(&self, pairs: &[ImagePair]) -> Result<Option<Validation>> {
        validate_generator(&self.generator, &self.generator_config, pairs)
    }
}

/// Mean PSNR / SSIM of clamped whole-image outputs; `None` for no pairs.
pub fn validate_generator<T: Real>(
    params: &ParamStore<T>,
    config: &GeneratorConfig,
    pairs: &[ImagePair],
) -> Result<Option<Validation>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let out = upscale(params, config, &pair.lr)?.clamp01();
        p += psnr(&out, &pair.hr, 1.0)?;
        s += ssim(&out, &pair.hr, 1.0)?;
    }
    let n = pairs.len() as f64;
    Ok(Some(Validation {
        psnr: p / n,
        ssim: s / n,
    }))
}

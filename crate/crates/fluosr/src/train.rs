//! Two-phase training run: data split, patching, epochs, validation,
//! checkpoints and the CSV log.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fluosr_core::data::{epoch_batches, extract_patches, split_validation, ImagePair, PatchPair};
use fluosr_core::init::derive_seed;
use fluosr_core::trainer::{Phase, Trainer, Validation, EXTRACTOR_SEED_STREAM, SPLIT_SEED_STREAM};
use fluosr_core::{ParamStore, Real};

use crate::checkpoint::{load_extractor, Checkpoint};
use crate::config::{Precision, RunConfig};
use crate::error::{data_err, usage_err, FluoError, Result};
use crate::log::TrainLog;

pub const LOG_FILE: &str = "train_log.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of a fresh start.
    pub resume: Option<PathBuf>,
    /// Stop after pre-training.
    pub phase1_only: bool,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub steps: usize,
    pub collapse_warnings: usize,
    /// Validation after the last epoch of each phase that ran.
    pub phase1_validation: Option<Validation>,
    pub phase2_validation: Option<Validation>,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
    pub wall_seconds: f64,
}

pub fn checkpoint_name(phase: Phase, epochs_done: usize) -> String {
    format!("p{}_e{:03}.ckpt", phase.number(), epochs_done)
}

/// Held-out pairs by id; never patched into training.
pub fn split(config: &RunConfig, pairs: Vec<ImagePair>) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    let seed = derive_seed(config.schedule.seed, SPLIT_SEED_STREAM);
    Ok(split_validation(pairs, config.validation_fraction, seed)?)
}

pub fn training_patches(config: &RunConfig, train: &[ImagePair]) -> Result<Vec<PatchPair>> {
    let mut patches = Vec::new();
    for pair in train {
        patches.extend(extract_patches(pair, config.patch_size, config.overlap)?);
    }
    Ok(patches)
}

pub fn extractor_weights<T: Real>(config: &RunConfig) -> Result<ParamStore<T>> {
    match &config.extractor_weights {
        Some(path) => load_extractor(path, &config.extractor),
        None => Ok(config
            .extractor
            .init_random(derive_seed(config.schedule.seed, EXTRACTOR_SEED_STREAM))?),
    }
}

/// Fails unless `saved` and `requested` agree on everything except epoch
/// counts, output location, tiling and precision.
pub fn check_resumable(saved: &RunConfig, requested: &RunConfig) -> Result<()> {
    let normalize = |c: &RunConfig| {
        let mut c = c.clone();
        c.schedule.phase1_epochs = 0;
        c.schedule.phase2_epochs = 0;
        c.output_dir = PathBuf::new();
        c.tiles = Default::default();
        c.precision = Precision::F32;
        c.to_text()
    };
    let (a, b) = (normalize(saved), normalize(requested));
    if a == b {
        return Ok(());
    }
    let diff: Vec<String> = a
        .lines()
        .zip(b.lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("checkpoint `{x}` vs requested `{y}`"))
        .collect();
    Err(usage_err!("checkpoint was trained with a different configuration:\n  {}", diff.join("\n  ")))
}

pub fn train(config: &RunConfig, pairs: Vec<ImagePair>, opts: &TrainOptions) -> Result<TrainOutcome> {
    match config.precision {
        Precision::F32 => train_with::<f32>(config, pairs, opts),
        Precision::F64 => train_with::<f64>(config, pairs, opts),
    }
}

pub fn train_with<T: Real>(config: &RunConfig, pairs: Vec<ImagePair>, opts: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(data_err!("dataset is empty"));
    }
    let started = Instant::now();
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| FluoError::io(&out, e))?;
    std::fs::write(out.join(CONFIG_FILE), config.to_text()).map_err(|e| FluoError::io(out.join(CONFIG_FILE), e))?;

    let (train, val) = split(config, pairs)?;
    let patches = training_patches(config, &train)?;
    if patches.is_empty() {
        return Err(data_err!("no training patches: images smaller than patch_size {}", config.patch_size));
    }

    let mut trainer = Trainer::<T>::new(
        config.generator.clone(),
        config.discriminator(),
        config.extractor.clone(),
        extractor_weights(config)?,
        config.weights,
        config.schedule.clone(),
    )?;

    // (phase, epochs already done in it)
    let mut position = (Phase::Pretrain, 0);
    if let Some(path) = &opts.resume {
        let ckpt = Checkpoint::<T>::load(path)?;
        check_resumable(&ckpt.config, config)?;
        ckpt.restore(&mut trainer)?;
        position = (ckpt.phase, ckpt.epochs_done);
    }

    let mut outcome = TrainOutcome {
        log: out.join(LOG_FILE),
        last_checkpoint: out.join(LAST_CHECKPOINT),
        ..TrainOutcome::default()
    };
    let mut log = TrainLog::open(&outcome.log)?;
    let save = |trainer: &Trainer<T>, phase: Phase, done: usize| -> Result<()> {
        let ckpt = Checkpoint::from_trainer(trainer, config, phase, done);
        ckpt.save(&out.join(checkpoint_name(phase, done)))?;
        ckpt.save(&out.join(LAST_CHECKPOINT))
    };
    if opts.resume.is_none() {
        save(&trainer, Phase::Pretrain, 0)?;
    }

    let run_phase2 = !opts.phase1_only && config.schedule.phase2_epochs > 0;
    for phase in [Phase::Pretrain, Phase::Gan] {
        if phase == Phase::Gan && !run_phase2 {
            break;
        }
        if phase < position.0 {
            continue;
        }
        let first = if phase == position.0 { position.1 } else { 0 };
        if phase == Phase::Gan && trainer.discriminator.is_none() {
            // the phase-1 generator carries over; everything else starts fresh
            trainer.start_phase2()?;
        }
        let total = config.schedule.epochs(phase);
        for epoch in first..total {
            let epoch_start = Instant::now();
            let lr = config.schedule.lr_at_epoch(epoch);
            let batches = epoch_batches::<T>(
                &patches,
                config.schedule.batch_size,
                config.drop_last,
                config.schedule.seed,
                phase.number(),
                epoch,
            )?;
            let mut last = None;
            for (step, batch) in batches.iter().enumerate() {
                let t0 = Instant::now();
                let report = match phase {
                    Phase::Pretrain => trainer.pretrain_step(batch, lr)?,
                    Phase::Gan => trainer.gan_step(batch, lr)?,
                };
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                log.step(epoch, step, &report, ms)?;
                if report.collapse_warning {
                    outcome.collapse_warnings += 1;
                    eprintln!(
                        "warning: discriminator loss below threshold for {} consecutive steps (phase {phase}, epoch {epoch}, step {step})",
                        trainer.low_d_streak
                    );
                }
                outcome.steps += 1;
                last = Some(report);
            }
            let val = trainer.validate(&val)?;
            log.epoch(phase, epoch, lr, val, epoch_start.elapsed().as_secs_f64() * 1e3)?;
            save(&trainer, phase, epoch + 1)?;
            match phase {
                Phase::Pretrain => outcome.phase1_validation = val,
                Phase::Gan => outcome.phase2_validation = val,
            }
            if opts.verbose {
                eprintln!("{}", progress_line(phase, epoch, total, lr, last.as_ref(), val, epoch_start));
            }
        }
    }
    outcome.wall_seconds = started.elapsed().as_secs_f64();
    Ok(outcome)
}

fn progress_line(
    phase: Phase,
    epoch: usize,
    total: usize,
    lr: f64,
    last: Option<&fluosr_core::trainer::StepReport>,
    val: Option<Validation>,
    started: Instant,
) -> String {
    let mut s = format!("phase {phase} epoch {}/{total} lr {lr:.3e}", epoch + 1);
    if let Some(r) = last {
        s += &format!(" pixel {:.5}", r.pixel);
        if let (Some(g), Some(d)) = (r.adversarial_g, r.adversarial_d) {
            s += &format!(" adv_G {g:.4} adv_D {d:.4}");
        }
    }
    if let Some(v) = val {
        s += &format!(" val {:.2} dB / {:.4}", v.psnr, v.ssim);
    }
    s + &format!(" ({:.1} s)", started.elapsed().as_secs_f64())
}

/// Loads the generator of a checkpoint at the requested precision.
pub fn load_generator<T: Real>(path: &Path) -> Result<(RunConfig, ParamStore<T>)> {
    let ckpt = Checkpoint::<T>::load(path)?;
    Ok((ckpt.config, ckpt.generator))
}

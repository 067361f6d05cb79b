//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers (e.g. `3 5`) to run a subset.

#[path = "../../core/tests/common/reference.rs"]
mod reference;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use fluosr::checkpoint::Checkpoint;
use fluosr::config::{Preset, RunConfig};
use fluosr::container::Container;
use fluosr::infer::Model;
use fluosr::log::{read_log, LogRow};
use fluosr::train::{checkpoint_name, split, train, TrainOptions, LAST_CHECKPOINT, LOG_FILE};
use fluosr_core::data::{extract_patches, generate_synthetic_dataset, AugmentationOutcome, ImagePair};
use fluosr_core::gradcheck::suite::{run_suite, EPS};
use fluosr_core::gradcheck::tolerance;
use fluosr_core::losses::{l1_loss, l2_loss, perceptual_loss, texture_loss, Extractor, Norm, RadBatch};
use fluosr_core::metrics::{psnr, ssim};
use fluosr_core::models::{FeatureExtractorConfig, GeneratorConfig, Truncation};
use fluosr_core::tiling::{upscale, upscale_tiled, TileConfig};
use fluosr_core::trainer::{Phase, TrainSchedule};
use fluosr_core::{Eval, GrayImage, ParamStore, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

// criterion 1
const GRAD_CASE_MIN: usize = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
// criterion 2
const LOSS_ABS_TOL: f64 = 1e-6;
const RAD_REL_TOL: f64 = 1e-6;
const INDIFFERENCE_TOL: f64 = 1e-9;
// criterion 3
const LARGE_PAIR_PATCHES: usize = 225;
const IDENTITY_RATE: f64 = 0.5625;
const IDENTITY_TOL: f64 = 0.01;
const AUGMENT_DRAWS: usize = 100_000;
// criterion 5
const MIN_GAIN_DB: f64 = 1.0;
const DESK_BUDGET: Duration = Duration::from_secs(30 * 60);
// criterion 6
const TILE_TOL: f32 = 1e-4;
const INFER_BUDGET: Duration = Duration::from_secs(60);
// criterion 7
const METRIC_TOL: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn item(t: &Tensor<f64>) -> f64 {
    t.item().unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut coords = 0;
    let mut kinks = 0;
    let mut worst = Vec::new();
    fn one<T: Real>(cases: &mut usize, coords: &mut usize, kinks: &mut usize, worst: &mut Vec<String>) -> Result<(), String> {
        let tol = tolerance::<T>();
        let results = run_suite::<T>(2024, 3, 6, EPS).map_err(|e| e.to_string())?;
        let mut max_strict: f64 = 0.0;
        for c in &results {
            let r = &c.report;
            ensure!(
                r.passed() && r.max_rel_error <= tol,
                "{} {}: {} of {} coordinates above {tol:e} (worst {:.3e})",
                T::DTYPE.name(),
                c.name,
                r.failures,
                r.checked,
                r.max_rel_error
            );
            *coords += r.checked;
            *kinks += r.kink_crossings;
            if r.kink_crossings == 0 {
                max_strict = max_strict.max(r.max_rel_error_at_eps);
            }
        }
        *cases += results.len();
        worst.push(format!("{} worst {:.1e}", T::DTYPE.name(), max_strict));
        Ok(())
    }
    one::<f64>(&mut cases, &mut coords, &mut kinks, &mut worst)?;
    one::<f32>(&mut cases, &mut coords, &mut kinks, &mut worst)?;
    let took = start.elapsed();
    ensure!(cases >= GRAD_CASE_MIN, "only {cases} cases");
    ensure!(took < GRAD_BUDGET, "took {took:.1?}");
    Ok(format!(
        "{cases} cases, {coords} coordinates, {kinks} re-differenced across activation kinks, {}, {took:.1?}",
        worst.join(", ")
    ))
}

fn losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let ext_cfg = FeatureExtractorConfig {
        in_channels: 1,
        blocks: vec![(2, 3), (2, 2)],
        truncation: Truncation::Conv { block: 2, conv: 1 },
    };
    for draw in 0..20 {
        // 2 x 1 x 4 x 4 = 32 elements
        let x = random_tensor(&mut rng, &[2, 1, 4, 4]);
        let y = random_tensor(&mut rng, &[2, 1, 4, 4]);
        let params: ParamStore<f64> = ext_cfg.init_random(draw).map_err(|e| e.to_string())?;
        let mut ev = Eval;
        let bound = params.bind(&mut ev, false);
        let ext = Extractor {
            config: &ext_cfg,
            params: &bound,
        };
        let fx = reference::extract(&params, &ext_cfg, &reference::to_maps(&x));
        let fy = reference::extract(&params, &ext_cfg, &reference::to_maps(&y));
        let (gx, gy) = (reference::gram(&fx), reference::gram(&fy));
        let (fx, fy) = (reference::flat(&fx), reference::flat(&fy));
        let checks = [
            (item(&l1_loss(&mut ev, &x, &y).unwrap()), reference::l1(x.data(), y.data())),
            (item(&l2_loss(&mut ev, &x, &y).unwrap()), reference::l2(x.data(), y.data())),
            (item(&perceptual_loss(&mut ev, ext, &x, &y, Norm::L1).unwrap()), reference::l1(&fx, &fy)),
            (item(&perceptual_loss(&mut ev, ext, &x, &y, Norm::L2).unwrap()), reference::l2(&fx, &fy)),
            (item(&texture_loss(&mut ev, ext, &x, &y, Norm::L1).unwrap()), reference::l1(&gx, &gy)),
            (item(&texture_loss(&mut ev, ext, &x, &y, Norm::L2).unwrap()), reference::l2(&gx, &gy)),
        ];
        for (got, want) in checks {
            worst = worst.max((got - want).abs());
        }
    }
    ensure!(worst < LOSS_ABS_TOL, "pixel/feature losses off by {worst:e}");

    let rad = |r: Vec<f64>, f: Vec<f64>| {
        RadBatch::new(Tensor::new([r.len(), 1], r).unwrap(), Tensor::new([f.len(), 1], f).unwrap())
            .and_then(|b| b.losses())
            .map_err(|e| e.to_string())
    };
    let mut worst_rel: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=32);
        let real: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let fake: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let (lg, ld) = rad(real.clone(), fake.clone())?;
        let (eg, ed) = reference::rad_direct(&real, &fake);
        worst_rel = worst_rel.max((lg - eg).abs() / eg.abs()).max((ld - ed).abs() / ed.abs());
    }
    ensure!(worst_rel < RAD_REL_TOL, "RaD stable form off by {worst_rel:e} relative");
    let (lg, ld) = rad(vec![1e4, -1e4, 5e3], vec![-1e4, 1e4, 0.0])?;
    ensure!(lg.is_finite() && ld.is_finite(), "logits of 1e4 give {lg}, {ld}");
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    let (lg, ld) = rad(vec![0.7; 5], vec![0.7; 5])?;
    ensure!(
        (lg - two_ln2).abs() <= INDIFFERENCE_TOL && (ld - two_ln2).abs() <= INDIFFERENCE_TOL,
        "indifference gives {lg}, {ld}"
    );
    Ok(format!("losses within {worst:.1e}, RaD within {worst_rel:.1e} relative, 1e4 logits finite, indifference 2 ln 2"))
}

fn pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hr = GrayImage::from_fn(1024, 1024, |_, _| rng.random::<f32>());
    let lr = hr.box_downsample2().map_err(|e| e.to_string())?;
    let pair = ImagePair::new(lr.clone(), hr.clone(), "large").map_err(|e| e.to_string())?;
    let patches = extract_patches(&pair, 64, 0.5).map_err(|e| e.to_string())?;
    ensure!(patches.len() == LARGE_PAIR_PATCHES, "{} patches", patches.len());
    for p in &patches {
        let (r, c) = p.lr_origin;
        ensure!(p.lr == lr.crop(r, c, 64, 64).unwrap(), "LR patch at {:?} is not a crop", p.lr_origin);
        ensure!(p.hr == hr.crop(2 * r, 2 * c, 128, 128).unwrap(), "HR patch at {:?} is incoherent", p.lr_origin);
    }
    let probe = GrayImage::from_fn(4, 4, |r, c| (r * 4 + c) as f32);
    let same = (0..AUGMENT_DRAWS)
        .filter(|_| AugmentationOutcome::draw(&mut rng).apply(&probe) == probe)
        .count();
    let rate = same as f64 / AUGMENT_DRAWS as f64;
    ensure!((rate - IDENTITY_RATE).abs() <= IDENTITY_TOL, "identity rate {rate}");
    Ok(format!("{LARGE_PAIR_PATCHES} coherent patches, identity rate {rate:.4}"))
}

/// Networks small enough that a two-phase run takes well under a second.
fn tiny_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::toy();
    c.patch_size = 8;
    c.generator = GeneratorConfig {
        num_rrdb: 1,
        base_channels: 4,
        growth_channels: 2,
        ..GeneratorConfig::toy()
    };
    c.disc_channels = vec![4, 4];
    c.disc_dense_units = 8;
    c.extractor = FeatureExtractorConfig {
        in_channels: 1,
        blocks: vec![(1, 4), (1, 4)],
        truncation: Truncation::Conv { block: 2, conv: 1 },
    };
    c.validation_fraction = 0.25;
    c.schedule.phase1_epochs = 1;
    c.schedule.phase2_epochs = 1;
    c.output_dir = out.to_path_buf();
    c
}

fn schedule() -> Outcome {
    let s = TrainSchedule::default();
    let expected = [1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6, 3.125e-6];
    for (e, &want) in expected.iter().enumerate() {
        ensure!(s.lr_at_epoch(e) == want, "epoch {e}: {} != {want}", s.lr_at_epoch(e));
    }
    ensure!(s.lr_at_epoch(10) == 9.765625e-8, "epoch 10: {}", s.lr_at_epoch(10));

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tiny_config(dir.path());
    let pairs = generate_synthetic_dataset(4, 32, 0.05, 4).map_err(|e| e.to_string())?;
    train(&config, pairs, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let p1 = dir.path().join(checkpoint_name(Phase::Pretrain, 1));
    let c1 = Checkpoint::<f32>::load(&p1).map_err(|e| e.to_string())?;
    ensure!(c1.discriminator.is_none(), "phase-1 checkpoint carries discriminator state");
    let records = Container::load(&p1).map_err(|e| e.to_string())?;
    ensure!(
        records.with_prefix("disc").next().is_none(),
        "phase-1 checkpoint has discriminator records"
    );
    let rows = read_log(&dir.path().join(LOG_FILE)).map_err(|e| e.to_string())?;
    ensure!(
        rows.iter().filter(|r| r.phase == 1).all(|r| r.adv_d().is_none() && r.adv_g().is_none()),
        "phase-1 log rows report adversarial terms"
    );

    let mut checked = 0;
    for name in [checkpoint_name(Phase::Pretrain, 0), checkpoint_name(Phase::Pretrain, 1), checkpoint_name(Phase::Gan, 1)] {
        let path = dir.path().join(&name);
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let copy = dir.path().join("copy.ckpt");
        Checkpoint::<f32>::load(&path)
            .and_then(|c| c.save(&copy))
            .map_err(|e| e.to_string())?;
        ensure!(std::fs::read(&copy).map_err(|e| e.to_string())? == bytes, "{name} changed on round trip");
        checked += 1;
    }
    Ok(format!("halving exact through epoch 10, phase 1 free of discriminator state, {checked} checkpoints byte-identical"))
}

struct DeskRun {
    _dir: tempfile::TempDir,
    checkpoint: std::path::PathBuf,
}

fn desk_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::toy();
    c.schedule.seed = 0;
    c.output_dir = out.to_path_buf();
    c
}

fn desk_scale(run: &mut Option<DeskRun>) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = desk_config(dir.path());
    // 256x256 HR, 128x128 LR
    let pairs = generate_synthetic_dataset(32, 256, 0.05, 0).map_err(|e| e.to_string())?;
    let (_, val) = split(&config, pairs.clone()).map_err(|e| e.to_string())?;
    let bicubic = val
        .iter()
        .map(|p| psnr(&p.lr.bicubic_upsample2().unwrap().clamp01(), &p.hr, 1.0).unwrap())
        .sum::<f64>()
        / val.len() as f64;
    let opts = TrainOptions {
        verbose: true,
        ..TrainOptions::default()
    };
    let outcome = train(&config, pairs, &opts).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let p1 = outcome.phase1_validation.ok_or("no phase-1 validation")?;
    let p2 = outcome.phase2_validation.ok_or("no phase-2 validation")?;
    let rows = read_log(&outcome.log).map_err(|e| e.to_string())?;
    let gan: Vec<&LogRow> = rows.iter().filter(|r| r.phase == 2 && r.step.is_some()).collect();
    run.replace(DeskRun {
        checkpoint: dir.path().join(LAST_CHECKPOINT),
        _dir: dir,
    });

    let gain = p1.psnr - bicubic;
    let summary = format!(
        "bicubic {bicubic:.2} dB, phase 1 {:.2} dB ({gain:+.2}), phase 2 {:.2} dB / SSIM {:.3}, {} steps, {:.0} s",
        p1.psnr,
        p2.psnr,
        p2.ssim,
        outcome.steps,
        took.as_secs_f64()
    );
    ensure!(gain >= MIN_GAIN_DB, "{summary}: phase-1 gain below {MIN_GAIN_DB} dB");
    ensure!(!gan.is_empty(), "{summary}: no phase-2 steps logged");
    ensure!(
        gan.iter().all(|r| [r.pixel(), r.perceptual(), r.adv_g(), r.adv_d()].iter().all(|v| v.is_some_and(f64::is_finite))),
        "{summary}: non-finite phase-2 loss"
    );
    ensure!(outcome.collapse_warnings == 0, "{summary}: {} collapse warnings", outcome.collapse_warnings);
    ensure!(took < DESK_BUDGET, "{summary}: over budget");
    Ok(summary)
}

fn inference(run: &Option<DeskRun>) -> Outcome {
    let dir;
    let checkpoint = match run {
        Some(r) => r.checkpoint.clone(),
        None => {
            // criterion 5 did not produce a model; train a short one
            dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut c = desk_config(dir.path());
            c.schedule.phase1_epochs = 1;
            c.schedule.phase2_epochs = 0;
            let pairs = generate_synthetic_dataset(8, 256, 0.05, 0).map_err(|e| e.to_string())?;
            train(&c, pairs, &TrainOptions::default()).map_err(|e| e.to_string())?;
            dir.path().join(LAST_CHECKPOINT)
        }
    };
    let (model, config) = Model::load(&checkpoint).map_err(|e| e.to_string())?;
    let (_, params) = fluosr::train::load_generator::<f32>(&checkpoint).map_err(|e| e.to_string())?;
    let gen = &config.generator;
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    for (h, w) in [(1, 1), (3, 7), (17, 10), (33, 64)] {
        let img = GrayImage::from_fn(h, w, |_, _| rng.random::<f32>());
        let out = model.upscale(&img, &config.tiles).map_err(|e| e.to_string())?;
        ensure!(out.dims() == (2 * h, 2 * w), "{h}x{w} gave {:?}", out.dims());
    }

    let tiles = TileConfig {
        tile: 64,
        overlap: 16,
        context: None,
    };
    let test = generate_synthetic_dataset(1, 320, 0.05, 99).map_err(|e| e.to_string())?;
    let mut worst: f32 = 0.0;
    for img in [test[0].lr.clone(), GrayImage::filled(150, 150, 0.4)] {
        let whole = upscale(&params, gen, &img).map_err(|e| e.to_string())?;
        let tiled = upscale_tiled(&params, gen, &img, &tiles).map_err(|e| e.to_string())?;
        worst = worst.max(whole.data().iter().zip(tiled.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max));
    }
    ensure!(worst < TILE_TOL, "tiled vs untiled differ by {worst:e}");

    let big = GrayImage::from_fn(512, 512, |_, _| rng.random::<f32>());
    let t0 = Instant::now();
    let out = model.upscale(&big, &config.tiles).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    ensure!(out.dims() == (1024, 1024), "512x512 gave {:?}", out.dims());
    ensure!(took < INFER_BUDGET, "512x512 took {took:.1?}");
    Ok(format!("2H x 2W for all sizes, tiled vs untiled {worst:.1e}, 512x512 in {:.1} s", took.as_secs_f64()))
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = GrayImage::from_fn(32, 32, |_, _| rng.random::<f32>());
        let y = GrayImage::from_fn(32, 32, |r, c| (x.get(r, c) + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0));
        worst = worst
            .max((psnr(&x, &y, 1.0).unwrap() - reference::psnr(&x, &y)).abs())
            .max((ssim(&x, &y, 1.0).unwrap() - reference::ssim(&x, &y)).abs());
    }
    ensure!(worst < METRIC_TOL, "off by {worst:e}");
    let x = GrayImage::from_fn(32, 32, |_, _| rng.random::<f32>());
    let (p, s) = (psnr(&x, &x, 1.0).unwrap(), ssim(&x, &x, 1.0).unwrap());
    ensure!(p == f64::INFINITY, "identical PSNR {p}");
    ensure!((s - 1.0).abs() < 1e-12, "identical SSIM {s}");
    Ok(format!("within {worst:.1e}, identical inputs give inf dB / SSIM 1"))
}

fn presets() -> Outcome {
    let pairs = generate_synthetic_dataset(4, 32, 0.05, 8).map_err(|e| e.to_string())?;
    let mut seen = Vec::new();
    for preset in [Preset::PixelL2, Preset::GanL2, Preset::Texture] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut config = tiny_config(dir.path());
        config.apply_preset(preset);
        let name = preset.name();
        train(&config, pairs.clone(), &TrainOptions::default()).map_err(|e| format!("{name}: {e}"))?;
        let rows = read_log(&dir.path().join(LOG_FILE)).map_err(|e| e.to_string())?;
        let steps: Vec<&LogRow> = rows.iter().filter(|r| r.step.is_some()).collect();
        let p2: Vec<&&LogRow> = steps.iter().filter(|r| r.phase == 2).collect();
        ensure!(!steps.is_empty(), "{name}: no steps logged");
        ensure!(steps.iter().all(|r| r.pixel().is_some() && r.lr().is_some()), "{name}: missing pixel_loss");
        ensure!(
            steps.iter().filter(|r| r.phase == 1).all(|r| r.perceptual().is_none() && r.adv_g().is_none() && r.adv_d().is_none()),
            "{name}: phase-1 rows carry inactive terms"
        );
        match preset {
            Preset::PixelL2 => ensure!(p2.is_empty(), "pixel-l2 ran phase 2"),
            _ => {
                ensure!(!p2.is_empty(), "{name}: no phase-2 rows");
                ensure!(
                    p2.iter().all(|r| r.perceptual().is_some() && r.adv_g().is_some() && r.adv_d().is_some()),
                    "{name}: phase-2 rows missing active terms"
                );
            }
        }
        let epochs = rows.iter().filter(|r| r.step.is_none()).count();
        ensure!(epochs == if p2.is_empty() { 1 } else { 2 }, "{name}: {epochs} epoch rows");
        seen.push(format!("{name} {}+{} rows", steps.len() - p2.len(), p2.len()));
    }
    Ok(seen.join(", "))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut desk = None;
    let mut failed = 0;
    let mut report = |n: usize, title: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS {n} {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {title}: {detail}");
            }
        }
    };
    if want(1) {
        report(1, "gradient correctness", guarded(gradients));
    }
    if want(2) {
        report(2, "loss-formula oracles", guarded(losses));
    }
    if want(3) {
        report(3, "pipeline arithmetic", guarded(pipeline));
    }
    if want(4) {
        report(4, "schedule exactness", guarded(schedule));
    }
    if want(5) {
        report(5, "desk-scale end-to-end", guarded(|| desk_scale(&mut desk)));
    }
    if want(6) {
        report(6, "inference contract", guarded(|| inference(&desk)));
    }
    if want(7) {
        report(7, "metric oracles", guarded(metrics));
    }
    if want(8) {
        report(8, "ablation presets", guarded(presets));
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

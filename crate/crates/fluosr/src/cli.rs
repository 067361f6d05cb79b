//! Command-line verbs: `prepare`, `train`, `infer`, `evaluate`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fluosr_core::data::{generate_synthetic_dataset, patch_count, patch_stride};
use fluosr_core::tiling::TileConfig;

use crate::config::{Preset, RunConfig};
use crate::error::{data_err, usage_err, FluoError, Result, EXIT_OK, EXIT_USAGE};
use crate::evaluate::{format_table, montage, run_models, score};
use crate::infer::{infer_file, Model};
use crate::io::{load_dataset, load_pairs, resolve_entries, save_image, write_dataset, write_manifest, BitDepth};
use crate::train::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "fluosr", version, about = "Joint denoising and 2x super-resolution for grayscale fluorescence microscopy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset (or synthesize one) and write its manifest.
    Prepare(PrepareArgs),
    /// Two-phase training: pixel-loss pre-training, then GAN training.
    Train(TrainArgs),
    /// Upscale images 2x with a trained checkpoint.
    Infer(InferArgs),
    /// Compare checkpoints against bicubic upsampling on held-out pairs.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset directory with `lr/` and `hr/` subdirectories of same-named images.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate this many synthetic pairs instead of reading a directory.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Synthetic HR side length in pixels (LR is half).
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Synthetic additive noise sigma.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Synthetic generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for synthetic data; manifest path for `--input`
    /// (default `<input>/manifest.tsv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// LR patch side used for the patch-count forecast.
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    /// Patch overlap fraction used for the forecast.
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest or directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss configuration: final, pixel-l2, gan-l2 or texture.
    #[arg(long)]
    pub preset: Option<String>,
    /// Start from the small desk-scale networks instead of the full-size ones.
    #[arg(long)]
    pub toy: bool,
    /// Stop after pre-training.
    #[arg(long)]
    pub phase1_only: bool,
    /// Epochs for each phase.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint; its configuration is the base.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoints, log and config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed (split, initialization, augmentation, shuffling).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one configuration key, e.g. `--set lr_initial=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
    /// No per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Tile side in LR pixels (default from the checkpoint, normally 256).
    #[arg(long)]
    pub tile: Option<usize>,
    /// Tile overlap in LR pixels (default from the checkpoint, normally 32).
    #[arg(long)]
    pub tile_overlap: Option<usize>,
    /// Context pixels per tile side; default is the receptive radius capped at 64.
    #[arg(long)]
    pub tile_context: Option<usize>,
}

impl TileArgs {
    fn resolve(&self, base: TileConfig) -> Result<TileConfig> {
        let t = TileConfig {
            tile: self.tile.unwrap_or(base.tile),
            overlap: self.tile_overlap.unwrap_or(base.overlap),
            context: self.tile_context.or(base.context),
        };
        t.validate().map_err(|e| usage_err!("{e}"))?;
        Ok(t)
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input images (PNG or TIFF, 8- or 16-bit grayscale).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory; files keep their names.
    #[arg(long, conflicts_with = "output")]
    pub out: Option<PathBuf>,
    /// Output file, for a single input.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tiles: TileArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint to score; repeat to compare several (e.g. intermediate epochs).
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Manifest or directory of LR/HR pairs.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write one montage PNG per pair into this directory.
    #[arg(long)]
    pub montage: Option<PathBuf>,
    /// Also write per-image metrics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub tiles: TileArgs,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn forecast(size: (usize, usize), patch: usize, overlap: f64) -> Result<usize> {
    let stride = patch_stride(patch, overlap).map_err(|e| usage_err!("{e}"))?;
    Ok(patch_count(size.0, patch, stride) * patch_count(size.1, patch, stride))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    patch_stride(a.patch_size, a.overlap).map_err(|e| usage_err!("{e}"))?;
    let pairs = if let Some(n) = a.synthetic {
        if a.size == 0 || a.size % 2 != 0 {
            return Err(usage_err!("--size must be a positive even number, got {}", a.size));
        }
        if !(a.noise >= 0.0 && a.noise.is_finite()) {
            return Err(usage_err!("--noise must be non-negative, got {}", a.noise));
        }
        let out = a.out.clone().ok_or_else(|| usage_err!("--synthetic needs --out <dir>"))?;
        let pairs = generate_synthetic_dataset(n, a.size, a.noise, a.seed)?;
        let manifest = write_dataset(&out, &pairs)?;
        println!("wrote {} synthetic pairs to {}", pairs.len(), manifest.display());
        pairs
    } else {
        let input = a.input.clone().expect("clap requires --input without --synthetic");
        let entries = resolve_entries(&input)?;
        let (pairs, failures) = load_pairs(&entries);
        for f in &failures {
            eprintln!("invalid pair: {f}");
        }
        let valid: Vec<(PathBuf, PathBuf)> = entries
            .iter()
            .filter(|(lr, _)| {
                let stem = lr.file_stem().map(|s| s.to_string_lossy().into_owned());
                pairs.iter().any(|p| Some(&p.id) == stem.as_ref())
            })
            .cloned()
            .collect();
        if pairs.is_empty() {
            return Err(data_err!("{}: no valid image pairs", input.display()));
        }
        let manifest = a.out.clone().unwrap_or_else(|| input.join("manifest.tsv"));
        write_manifest(&manifest, &valid)?;
        println!("wrote manifest {} ({} valid, {} invalid)", manifest.display(), pairs.len(), failures.len());
        pairs
    };
    if pairs.is_empty() {
        return Err(data_err!("no image pairs"));
    }
    let mut total = 0;
    for p in &pairs {
        total += forecast(p.lr.dims(), a.patch_size, a.overlap)?;
    }
    let per = forecast(pairs[0].lr.dims(), a.patch_size, a.overlap)?;
    println!("pairs: {}", pairs.len());
    println!(
        "patch forecast: {per} per image ({}x{} LR), {total} total (patch {}, overlap {})",
        pairs[0].lr.height(),
        pairs[0].lr.width(),
        a.patch_size,
        a.overlap
    );
    Ok(())
}

/// Base (toy, default or checkpoint config), then file, preset, `--set`
/// and finally the dedicated flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match (&a.resume, a.config.is_some() || a.toy) {
        (Some(ckpt), false) => crate::checkpoint::Checkpoint::<f64>::load(ckpt)?.config,
        _ if a.toy => RunConfig::toy(),
        _ => RunConfig::default(),
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| FluoError::io(path, e))?;
        c.apply_text(&text).map_err(|e| usage_err!("{}: {e}", path.display()))?;
    }
    if let Some(p) = &a.preset {
        c.apply_preset(p.parse()?);
    }
    for kv in &a.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage_err!("--set expects KEY=VALUE, got `{kv}`"))?;
        c.set(k.trim(), v)?;
    }
    if let Some(e) = a.epochs {
        c.schedule.phase1_epochs = e;
        c.schedule.phase2_epochs = e;
    }
    // --phase1-only stops the run but leaves the schedule intact, so a
    // later resume can still go on to phase 2
    if a.preset.as_deref() == Some(Preset::PixelL2.name()) {
        c.schedule.phase2_epochs = 0;
    }
    if let Some(s) = a.seed {
        c.schedule.seed = s;
    }
    if let Some(o) = &a.out {
        c.output_dir = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = resolve_train_config(&a)?;
    if a.dry_run {
        print!("{}", config.to_text());
        return Ok(());
    }
    let pairs = load_dataset(&resolve_entries(&a.manifest)?)?;
    let opts = TrainOptions {
        resume: a.resume.clone(),
        phase1_only: a.phase1_only,
        verbose: !a.quiet,
    };
    let outcome = train(&config, pairs, &opts)?;
    for (phase, v) in [(1, outcome.phase1_validation), (2, outcome.phase2_validation)] {
        if let Some(v) = v {
            println!("phase {phase} validation: PSNR {:.3} dB, SSIM {:.4}", v.psnr, v.ssim);
        }
    }
    if outcome.collapse_warnings > 0 {
        println!("collapse warnings: {}", outcome.collapse_warnings);
    }
    println!(
        "{} steps in {:.1} s; checkpoint {}; log {}",
        outcome.steps,
        outcome.wall_seconds,
        outcome.last_checkpoint.display(),
        outcome.log.display()
    );
    Ok(())
}

fn output_path(a: &InferArgs, input: &Path) -> Result<PathBuf> {
    if let Some(o) = &a.output {
        if a.inputs.len() != 1 {
            return Err(usage_err!("--output takes a single input; use --out <dir> for several"));
        }
        return Ok(o.clone());
    }
    let name = input.file_name().ok_or_else(|| usage_err!("{}: not a file", input.display()))?;
    match &a.out {
        Some(dir) => Ok(dir.join(name)),
        None => {
            let stem = input.file_stem().unwrap_or_default().to_string_lossy();
            let ext = input.extension().map_or("png".into(), |e| e.to_string_lossy());
            Ok(input.with_file_name(format!("{stem}_x2.{ext}")))
        }
    }
}

fn infer(a: InferArgs) -> Result<()> {
    let outputs: Vec<PathBuf> = a.inputs.iter().map(|i| output_path(&a, i)).collect::<Result<_>>()?;
    let (model, config) = Model::load(&a.checkpoint)?;
    let tiles = a.tiles.resolve(config.tiles)?;
    for (input, output) in a.inputs.iter().zip(&outputs) {
        let r = infer_file(&model, &tiles, input, output)?;
        println!(
            "{} ({}x{}) -> {} ({}x{}) in {:.2} s",
            input.display(),
            r.input.1,
            r.input.0,
            output.display(),
            r.output.1,
            r.output.0,
            r.seconds
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut models = Vec::new();
    let mut tiles = None;
    for ckpt in &a.checkpoints {
        let (m, config) = Model::load(ckpt)?;
        tiles.get_or_insert(config.tiles);
        models.push(m);
    }
    let tiles = a.tiles.resolve(tiles.unwrap_or_default())?;
    let pairs = load_dataset(&resolve_entries(&a.manifest)?)?;
    if pairs.is_empty() {
        return Err(data_err!("{}: no pairs to evaluate", a.manifest.display()));
    }
    let mut rows = Vec::new();
    for pair in &pairs {
        let outs = run_models(&models, &tiles, pair)?;
        rows.push(score(pair, &outs)?);
        if let Some(dir) = &a.montage {
            let mut panels = vec![&outs.bicubic];
            panels.extend(outs.models.iter());
            panels.push(&pair.hr);
            save_image(&dir.join(format!("{}_montage.png", pair.id)), &montage(&panels)?, BitDepth::Eight)?;
        }
    }
    let names: Vec<String> = a
        .checkpoints
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    print!("{}", format_table(&rows, &names));
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| data_err!("{}: {e}", path.display()))?;
        let mut header = vec!["image".to_string(), "bicubic_psnr".into(), "bicubic_ssim".into()];
        for n in &names {
            header.push(format!("{n}_psnr"));
            header.push(format!("{n}_ssim"));
        }
        let werr = |e: csv::Error| data_err!("{}: {e}", path.display());
        w.write_record(&header).map_err(werr)?;
        for r in &rows {
            let mut rec = vec![r.image_id.clone(), r.bicubic.psnr_db.to_string(), r.bicubic.ssim.to_string()];
            for m in &r.models {
                rec.push(m.psnr_db.to_string());
                rec.push(m.ssim.to_string());
            }
            w.write_record(&rec).map_err(werr)?;
        }
        w.flush().map_err(|e| FluoError::io(path, e))?;
    }
    Ok(())
}

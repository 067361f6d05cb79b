//! Run configuration as flat `key = value` text.
//!
//! Every key has a default matching the full-size setup; `RunConfig::toy()`
//! shrinks the networks for desk-scale runs. Unknown keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fluosr_core::losses::{LossWeights, Norm};
use fluosr_core::models::{DiscriminatorConfig, FeatureExtractorConfig, GeneratorConfig, Truncation};
use fluosr_core::tiling::TileConfig;
use fluosr_core::trainer::TrainSchedule;
use sha2::{Digest, Sha256};

use crate::error::{usage_err, FluoError, Result};

/// Loss configurations reproducing the final model and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// l1 pixel + l1 perceptual + adversarial, weights 1e-2 / 1e-2 / 1.0.
    Final,
    /// Pre-training only, with an l2 pixel loss.
    PixelL2,
    /// As `Final` with l2 for both pixel and perceptual terms.
    GanL2,
    /// As `Final` with the Gram texture loss in place of the perceptual loss.
    Texture,
}

impl FromStr for Preset {
    type Err = FluoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(Preset::Final),
            "pixel-l2" => Ok(Preset::PixelL2),
            "gan-l2" => Ok(Preset::GanL2),
            "texture" => Ok(Preset::Texture),
            _ => Err(usage_err!("unknown preset `{s}` (expected final, pixel-l2, gan-l2 or texture)")),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Final => "final",
            Preset::PixelL2 => "pixel-l2",
            Preset::GanL2 => "gan-l2",
            Preset::Texture => "texture",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub patch_size: usize,
    pub overlap: f64,
    pub validation_fraction: f64,
    pub drop_last: bool,
    pub generator: GeneratorConfig,
    pub disc_channels: Vec<usize>,
    pub disc_dense_units: usize,
    pub disc_leak: f64,
    pub disc_init_scale: f64,
    /// Weight file for the frozen extractor; `None` draws seeded-random weights.
    pub extractor_weights: Option<PathBuf>,
    pub extractor: FeatureExtractorConfig,
    pub weights: LossWeights,
    pub schedule: TrainSchedule,
    pub output_dir: PathBuf,
    pub tiles: TileConfig,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        let disc = DiscriminatorConfig::default();
        Self {
            patch_size: 64,
            overlap: 0.5,
            validation_fraction: 0.1,
            drop_last: false,
            generator: GeneratorConfig::default(),
            disc_channels: disc.channel_sequence,
            disc_dense_units: disc.dense_units,
            disc_leak: disc.leak,
            disc_init_scale: disc.init_scale,
            extractor_weights: None,
            extractor: FeatureExtractorConfig::default(),
            weights: LossWeights::default(),
            schedule: TrainSchedule::default(),
            output_dir: PathBuf::from("runs/default"),
            tiles: TileConfig::default(),
            precision: Precision::F32,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| usage_err!("`{key}`: cannot parse `{v}`"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

/// `convs x channels` per block, e.g. `2x64,2x128,4x256`.
fn parse_blocks(key: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|b| {
            let (n, c) = b
                .trim()
                .split_once('x')
                .ok_or_else(|| usage_err!("`{key}`: block `{b}` is not `<convs>x<channels>`"))?;
            Ok((parse(key, n)?, parse(key, c)?))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Two-RRDB generator, narrow discriminator and extractor, and a
    /// learning rate that converges within a couple of epochs.
    pub fn toy() -> Self {
        let disc = DiscriminatorConfig::toy(128);
        Self {
            generator: GeneratorConfig::toy(),
            disc_channels: disc.channel_sequence,
            disc_dense_units: disc.dense_units,
            extractor: FeatureExtractorConfig::toy(),
            schedule: TrainSchedule {
                phase1_epochs: 2,
                phase2_epochs: 2,
                lr_initial: 1e-3,
                batch_size: 8,
                ..TrainSchedule::default()
            },
            ..Self::default()
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let base = LossWeights::default();
        self.weights = match preset {
            Preset::Final => base,
            Preset::PixelL2 => LossWeights {
                pixel_norm: Norm::L2,
                ..base
            },
            Preset::GanL2 => LossWeights {
                pixel_norm: Norm::L2,
                perceptual_norm: Norm::L2,
                ..base
            },
            Preset::Texture => LossWeights {
                use_texture_instead_of_perceptual: true,
                ..base
            },
        };
        if preset == Preset::PixelL2 {
            self.schedule.phase2_epochs = 0;
        }
    }

    /// The discriminator judges HR patches, so its input side is twice the
    /// LR patch size.
    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_size: 2 * self.patch_size,
            in_channels: self.generator.in_channels,
            channel_sequence: self.disc_channels.clone(),
            dense_units: self.disc_dense_units,
            leak: self.disc_leak,
            init_scale: self.disc_init_scale,
        }
    }

    /// Checks every component so conflicts surface before any compute.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: fluosr_core::Error| FluoError::Usage(format!("invalid configuration: {e}"));
        self.generator.validate().map_err(wrap)?;
        self.discriminator().validate().map_err(wrap)?;
        self.extractor.validate().map_err(wrap)?;
        self.weights.validate().map_err(wrap)?;
        self.schedule.validate().map_err(wrap)?;
        self.tiles.validate().map_err(wrap)?;
        fluosr_core::data::patch_stride(self.patch_size, self.overlap).map_err(wrap)?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(usage_err!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        if self.schedule.phase2_epochs > 0 && 2 * self.patch_size < 16 {
            return Err(usage_err!("patch_size {} too small for the feature extractor", self.patch_size));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.generator;
        let s = &mut self.schedule;
        let w = &mut self.weights;
        match key {
            "patch_size" => self.patch_size = parse(key, v)?,
            "overlap" => self.overlap = parse(key, v)?,
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "drop_last" => self.drop_last = parse(key, v)?,
            "num_rrdb" => g.num_rrdb = parse(key, v)?,
            "base_channels" => g.base_channels = parse(key, v)?,
            "growth_channels" => g.growth_channels = parse(key, v)?,
            "convs_per_dense_block" => g.convs_per_dense_block = parse(key, v)?,
            "dense_blocks_per_rrdb" => g.dense_blocks_per_rrdb = parse(key, v)?,
            "residual_scale" => g.residual_scale = parse(key, v)?,
            "leak" => g.leak = parse(key, v)?,
            "init_scale" => g.init_scale = parse(key, v)?,
            "disc_channels" => self.disc_channels = parse_list(key, v)?,
            "disc_dense_units" => self.disc_dense_units = parse(key, v)?,
            "disc_leak" => self.disc_leak = parse(key, v)?,
            "disc_init_scale" => self.disc_init_scale = parse(key, v)?,
            "extractor_weights" => {
                self.extractor_weights = if v == "random" { None } else { Some(PathBuf::from(v)) }
            }
            "extractor_in_channels" => self.extractor.in_channels = parse(key, v)?,
            "extractor_blocks" => self.extractor.blocks = parse_blocks(key, v)?,
            "extractor_truncation" => {
                self.extractor.truncation = v
                    .parse::<Truncation>()
                    .map_err(|e| usage_err!("`{key}`: {e}"))?
            }
            "pixel_weight" => w.pixel = parse(key, v)?,
            "perceptual_weight" => w.perceptual = parse(key, v)?,
            "adversarial_weight" => w.adversarial = parse(key, v)?,
            "pixel_norm" => w.pixel_norm = v.parse().map_err(|e| usage_err!("`{key}`: {e}"))?,
            "perceptual_norm" => w.perceptual_norm = v.parse().map_err(|e| usage_err!("`{key}`: {e}"))?,
            "use_texture" => w.use_texture_instead_of_perceptual = parse(key, v)?,
            "phase1_epochs" => s.phase1_epochs = parse(key, v)?,
            "phase2_epochs" => s.phase2_epochs = parse(key, v)?,
            "lr_initial" => s.lr_initial = parse(key, v)?,
            "lr_decay" => s.lr_decay_per_epoch = parse(key, v)?,
            "beta1" => s.beta1 = parse(key, v)?,
            "beta2" => s.beta2 = parse(key, v)?,
            "batch_size" => s.batch_size = parse(key, v)?,
            "seed" => s.seed = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "tile" => self.tiles.tile = parse(key, v)?,
            "tile_overlap" => self.tiles.overlap = parse(key, v)?,
            "tile_context" => {
                self.tiles.context = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(usage_err!("`precision` must be f32 or f64, got `{v}`")),
                }
            }
            _ => return Err(usage_err!("unknown configuration key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage_err!("line {}: expected `key = value`, got `{raw}`", i + 1))?;
            self.set(k.trim(), v).map_err(|e| usage_err!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| FluoError::io(path, e))?;
        Self::from_text(&text).map_err(|e| usage_err!("{}: {e}", path.display()))
    }

    /// Every key, one per line, in a fixed order. Parses back to `self`.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let s = &self.schedule;
        let w = &self.weights;
        let blocks: Vec<String> = self.extractor.blocks.iter().map(|(n, c)| format!("{n}x{c}")).collect();
        let mut t = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(t, "{k} = {v}");
        };
        kv("patch_size", self.patch_size.to_string());
        kv("overlap", self.overlap.to_string());
        kv("validation_fraction", self.validation_fraction.to_string());
        kv("drop_last", self.drop_last.to_string());
        kv("num_rrdb", g.num_rrdb.to_string());
        kv("base_channels", g.base_channels.to_string());
        kv("growth_channels", g.growth_channels.to_string());
        kv("convs_per_dense_block", g.convs_per_dense_block.to_string());
        kv("dense_blocks_per_rrdb", g.dense_blocks_per_rrdb.to_string());
        kv("residual_scale", g.residual_scale.to_string());
        kv("leak", g.leak.to_string());
        kv("init_scale", g.init_scale.to_string());
        kv("disc_channels", join(&self.disc_channels));
        kv("disc_dense_units", self.disc_dense_units.to_string());
        kv("disc_leak", self.disc_leak.to_string());
        kv("disc_init_scale", self.disc_init_scale.to_string());
        kv(
            "extractor_weights",
            self.extractor_weights
                .as_ref()
                .map_or_else(|| "random".into(), |p| p.display().to_string()),
        );
        kv("extractor_in_channels", self.extractor.in_channels.to_string());
        kv("extractor_blocks", blocks.join(","));
        kv("extractor_truncation", self.extractor.truncation.to_string());
        kv("pixel_weight", w.pixel.to_string());
        kv("perceptual_weight", w.perceptual.to_string());
        kv("adversarial_weight", w.adversarial.to_string());
        kv("pixel_norm", w.pixel_norm.to_string());
        kv("perceptual_norm", w.perceptual_norm.to_string());
        kv("use_texture", w.use_texture_instead_of_perceptual.to_string());
        kv("phase1_epochs", s.phase1_epochs.to_string());
        kv("phase2_epochs", s.phase2_epochs.to_string());
        kv("lr_initial", s.lr_initial.to_string());
        kv("lr_decay", s.lr_decay_per_epoch.to_string());
        kv("beta1", s.beta1.to_string());
        kv("beta2", s.beta2.to_string());
        kv("batch_size", s.batch_size.to_string());
        kv("seed", s.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("tile", self.tiles.tile.to_string());
        kv("tile_overlap", self.tiles.overlap.to_string());
        kv(
            "tile_context",
            self.tiles.context.map_or_else(|| "auto".into(), |c| c.to_string()),
        );
        kv(
            "precision",
            match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
        );
        t
    }

    /// SHA-256 of [`to_text`](Self::to_text), hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

//! Full-image 2x inference from a checkpoint.

use std::path::Path;
use std::time::Instant;

use fluosr_core::models::GeneratorConfig;
use fluosr_core::tiling::{upscale_tiled, TileConfig};
use fluosr_core::{GrayImage, ParamStore};

use crate::config::{Precision, RunConfig};
use crate::error::Result;
use crate::io::{load_image, save_image};
use crate::train::load_generator;

/// Generator weights at the precision the checkpoint was configured for.
pub enum Model {
    F32(GeneratorConfig, ParamStore<f32>),
    F64(GeneratorConfig, ParamStore<f64>),
}

impl Model {
    pub fn load(checkpoint: &Path) -> Result<(Self, RunConfig)> {
        // the stored config decides the precision; f64 runs are read twice
        let (config, params) = load_generator::<f32>(checkpoint)?;
        let model = match config.precision {
            Precision::F32 => Model::F32(config.generator.clone(), params),
            Precision::F64 => Model::F64(config.generator.clone(), load_generator::<f64>(checkpoint)?.1),
        };
        Ok((model, config))
    }

    /// Clamped 2x output.
    pub fn upscale(&self, img: &GrayImage, tiles: &TileConfig) -> Result<GrayImage> {
        let out = match self {
            Model::F32(c, p) => upscale_tiled(p, c, img, tiles)?,
            Model::F64(c, p) => upscale_tiled(p, c, img, tiles)?,
        };
        Ok(out.clamp01())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InferReport {
    pub input: (usize, usize),
    pub output: (usize, usize),
    pub seconds: f64,
}

/// Upscales one file, writing it at the input's bit depth.
pub fn infer_file(model: &Model, tiles: &TileConfig, input: &Path, output: &Path) -> Result<InferReport> {
    let (img, depth) = load_image(input)?;
    let t0 = Instant::now();
    let out = model.upscale(&img, tiles)?;
    let seconds = t0.elapsed().as_secs_f64();
    save_image(output, &out, depth)?;
    Ok(InferReport {
        input: img.dims(),
        output: out.dims(),
        seconds,
    })
}

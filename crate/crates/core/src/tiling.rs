//! Whole-image and tiled 2x inference.
//!
//! Each tile is run with extra LR context around it, so interior output
//! pixels see the same neighbourhood they would in an untiled pass. The
//! context is then cropped off and neighbouring tiles are blended with
//! linear ramps across their overlap.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, Result};
use crate::image::GrayImage;
use crate::models::{generator_forward, GeneratorConfig};
use crate::ops::Eval;
use crate::params::ParamStore;
use crate::real::Real;

/// Upper bound on the default per-side tile context, in LR pixels.
pub const MAX_DEFAULT_CONTEXT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    /// Tile side in LR pixels.
    pub tile: usize,
    /// Overlap between neighbouring tiles in LR pixels.
    pub overlap: usize,
    /// Extra LR pixels run on each side of a tile and then discarded.
    /// `None` uses the generator's receptive radius, capped at
    /// [`MAX_DEFAULT_CONTEXT`].
    pub context: Option<usize>,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            tile: 256,
            overlap: 32,
            context: None,
        }
    }
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.overlap >= self.tile {
            return Err(arg_err!(
                "tiling",
                "need tile >= 1 and overlap < tile, got tile {} overlap {}",
                self.tile,
                self.overlap
            ));
        }
        Ok(())
    }

    pub fn context_for(&self, config: &GeneratorConfig) -> usize {
        self.context
            .unwrap_or_else(|| config.receptive_radius().min(MAX_DEFAULT_CONTEXT))
    }
}

/// Start offsets covering `dim` with `tile`-sized windows stepping by
/// `tile - overlap`; the last window is flush with the end.
pub fn tile_starts(dim: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if dim <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < dim).collect();
    starts.push(dim - tile);
    starts
}

/// Single forward pass over the whole image. The result is not clamped.
pub fn upscale<T: Real>(params: &ParamStore<T>, config: &GeneratorConfig, img: &GrayImage) -> Result<GrayImage> {
    let mut ev = Eval;
    let bound = params.bind(&mut ev, false);
    let x = img.to_tensor::<T>();
    let y = generator_forward(&mut ev, &bound, config, &x)?;
    GrayImage::from_tensor(&y, 0)
}

/// Blend weights along one axis of a tile spanning `[s, e)` in HR pixels.
fn ramp(s: usize, e: usize, prev_end: Option<usize>, next_start: Option<usize>) -> Vec<f64> {
    (s..e)
        .map(|x| {
            let mut w: f64 = 1.0;
            if let Some(pe) = prev_end.filter(|&pe| pe > s) {
                if x < pe {
                    w = w.min(((x - s) as f64 + 0.5) / (pe - s) as f64);
                }
            }
            if let Some(ns) = next_start.filter(|&ns| ns < e) {
                if x >= ns {
                    w = w.min(((e - x) as f64 - 0.5) / (e - ns) as f64);
                }
            }
            w
        })
        .collect()
}

/// Tiled 2x inference. Images that fit in one tile take the untiled path,
/// so the result is identical to [`upscale`]. The result is not clamped.
pub fn upscale_tiled<T: Real>(
    params: &ParamStore<T>,
    config: &GeneratorConfig,
    img: &GrayImage,
    tiles: &TileConfig,
) -> Result<GrayImage> {
    tiles.validate()?;
    let (h, w) = img.dims();
    if h <= tiles.tile && w <= tiles.tile {
        return upscale(params, config, img);
    }
    let ctx = tiles.context_for(config);
    let rows = tile_starts(h, tiles.tile, tiles.overlap);
    let cols = tile_starts(w, tiles.tile, tiles.overlap);
    let (th, tw) = (tiles.tile.min(h), tiles.tile.min(w));
    let mut acc = vec![0.0f64; 4 * h * w];
    let mut wsum = vec![0.0f64; 4 * h * w];
    for (ri, &r) in rows.iter().enumerate() {
        let wy = ramp(
            2 * r,
            2 * (r + th),
            ri.checked_sub(1).map(|p| 2 * (rows[p] + th)),
            rows.get(ri + 1).map(|&n| 2 * n),
        );
        for (ci, &c) in cols.iter().enumerate() {
            let wx = ramp(
                2 * c,
                2 * (c + tw),
                ci.checked_sub(1).map(|p| 2 * (cols[p] + tw)),
                cols.get(ci + 1).map(|&n| 2 * n),
            );
            let r0 = r.saturating_sub(ctx);
            let c0 = c.saturating_sub(ctx);
            let r1 = (r + th + ctx).min(h);
            let c1 = (c + tw + ctx).min(w);
            let patch = img.crop(r0, c0, r1 - r0, c1 - c0)?;
            let out = upscale(params, config, &patch)?;
            let (oy, ox) = (2 * (r - r0), 2 * (c - c0));
            for y in 0..2 * th {
                let row = (2 * r + y) * 2 * w;
                for x in 0..2 * tw {
                    let wt = wy[y] * wx[x];
                    let i = row + 2 * c + x;
                    acc[i] += wt * f64::from(out.get(oy + y, ox + x));
                    wsum[i] += wt;
                }
            }
        }
    }
    let data = acc.iter().zip(&wsum).map(|(a, s)| (a / s) as f32).collect();
    GrayImage::new(2 * h, 2 * w, data)
}

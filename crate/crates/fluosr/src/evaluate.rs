//! Bicubic-versus-model comparison tables and figure montages.

use std::fmt::Write as _;

use fluosr_core::data::ImagePair;
use fluosr_core::metrics::MetricReport;
use fluosr_core::tiling::TileConfig;
use fluosr_core::GrayImage;

use crate::error::{data_err, Result};
use crate::infer::Model;

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub image_id: String,
    pub bicubic: MetricReport,
    /// One report per model, in the order given.
    pub models: Vec<MetricReport>,
}

/// Outputs for one pair: bicubic first, then each model.
pub struct Outputs {
    pub bicubic: GrayImage,
    pub models: Vec<GrayImage>,
}

pub fn run_models(models: &[Model], tiles: &TileConfig, pair: &ImagePair) -> Result<Outputs> {
    Ok(Outputs {
        bicubic: pair.lr.bicubic_upsample2()?.clamp01(),
        models: models
            .iter()
            .map(|m| m.upscale(&pair.lr, tiles))
            .collect::<Result<_>>()?,
    })
}

pub fn score(pair: &ImagePair, outputs: &Outputs) -> Result<EvalRow> {
    Ok(EvalRow {
        image_id: pair.id.clone(),
        bicubic: MetricReport::compute(&pair.id, &outputs.bicubic, &pair.hr)?,
        models: outputs
            .models
            .iter()
            .map(|o| MetricReport::compute(&pair.id, o, &pair.hr))
            .collect::<fluosr_core::Result<_>>()?,
    })
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

/// Means over rows; any infinite PSNR makes the mean infinite.
pub fn means(rows: &[EvalRow]) -> (MetricReport, Vec<MetricReport>) {
    let n = rows.len().max(1) as f64;
    let mean = |get: &dyn Fn(&EvalRow) -> &MetricReport| MetricReport {
        image_id: "mean".into(),
        psnr_db: rows.iter().map(|r| get(r).psnr_db).sum::<f64>() / n,
        ssim: rows.iter().map(|r| get(r).ssim).sum::<f64>() / n,
    };
    let k = rows.first().map_or(0, |r| r.models.len());
    (mean(&|r| &r.bicubic), (0..k).map(|i| mean(&|r| &r.models[i])).collect())
}

/// Plain-text table, one line per image plus a mean line.
pub fn format_table(rows: &[EvalRow], model_names: &[String]) -> String {
    let mut t = format!("{:<24} {:>16}", "image", "bicubic");
    for name in model_names {
        let _ = write!(t, " {:>16}", truncate(name, 16));
    }
    t.push('\n');
    let line = |t: &mut String, id: &str, b: &MetricReport, ms: &[MetricReport]| {
        let _ = write!(t, "{:<24} {:>16}", truncate(id, 24), format!("{} / {:.4}", fmt_psnr(b.psnr_db), b.ssim));
        for m in ms {
            let _ = write!(t, " {:>16}", format!("{} / {:.4}", fmt_psnr(m.psnr_db), m.ssim));
        }
        t.push('\n');
    };
    for r in rows {
        line(&mut t, &r.image_id, &r.bicubic, &r.models);
    }
    let (b, ms) = means(rows);
    line(&mut t, "mean", &b, &ms);
    t
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Panels side by side (all the same size), with a second row showing the
/// centre crop of each panel enlarged 2x by pixel replication.
pub fn montage(panels: &[&GrayImage]) -> Result<GrayImage> {
    let first = panels.first().ok_or_else(|| data_err!("montage needs at least one panel"))?;
    let (h, w) = first.dims();
    if let Some(p) = panels.iter().find(|p| p.dims() != (h, w)) {
        return Err(data_err!("montage panels differ in size: {:?} vs {:?}", p.dims(), (h, w)));
    }
    let (ch, cw) = (h / 2, w / 2);
    let (r0, c0) = ((h - ch) / 2, (w - cw) / 2);
    Ok(GrayImage::from_fn(2 * h, panels.len() * w, |r, c| {
        let p = panels[c / w];
        let x = c % w;
        if r < h {
            p.get(r, x)
        } else {
            p.get(r0 + ((r - h) / 2).min(ch.saturating_sub(1)), c0 + (x / 2).min(cw.saturating_sub(1)))
        }
    }))
}

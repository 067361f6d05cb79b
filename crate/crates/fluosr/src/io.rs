//! Grayscale PNG/TIFF files, dataset directories and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use fluosr_core::data::ImagePair;
use fluosr_core::GrayImage;
use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{data_err, FluoError, Result};

/// Sample depth of a stored image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Reads an 8- or 16-bit grayscale image, scaled to `[0, 1]` by the
/// maximum of its bit depth.
pub fn load_image(path: &Path) -> Result<(GrayImage, BitDepth)> {
    let decoded = ImageReader::open(path)
        .map_err(|e| FluoError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| FluoError::io(path, e))?
        .decode()
        .map_err(|e| data_err!("{}: cannot decode: {e}", path.display()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (data, depth): (Vec<f32>, _) = match decoded {
        DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect(), BitDepth::Eight),
        DynamicImage::ImageLuma16(buf) => (
            buf.into_raw().into_iter().map(|v| f32::from(v) / 65535.0).collect(),
            BitDepth::Sixteen,
        ),
        other => {
            return Err(data_err!(
                "{}: expected 8- or 16-bit grayscale, found {:?}",
                path.display(),
                other.color()
            ))
        }
    };
    Ok((GrayImage::new(h, w, data)?, depth))
}

/// Writes `img` clamped to `[0, 1]`; the format follows the extension
/// (`.png`, `.tif`, `.tiff`).
pub fn save_image(path: &Path, img: &GrayImage, depth: BitDepth) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FluoError::io(dir, e))?;
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * depth.max_value()).round();
    let saved = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
                .expect("buffer sized from image")
                .save(path)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
                .expect("buffer sized from image")
                .save(path)
        }
    };
    saved.map_err(|e| data_err!("{}: cannot write image: {e}", path.display()))
}

/// Loads and checks one LR/HR pair; the id is the LR file stem.
pub fn load_image_pair(lr_path: &Path, hr_path: &Path) -> Result<ImagePair> {
    let (lr, _) = load_image(lr_path)?;
    let (hr, _) = load_image(hr_path)?;
    let id = lr_path
        .file_stem()
        .map_or_else(|| lr_path.display().to_string(), |s| s.to_string_lossy().into_owned());
    ImagePair::new(lr, hr, id).map_err(|e| data_err!("{} / {}: {e}", lr_path.display(), hr_path.display()))
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "tif" | "tiff")
    )
}

fn image_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| FluoError::io(dir, e))? {
        let path = entry.map_err(|e| FluoError::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            names.push(path.file_name().expect("file").to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Same-named files in `dir/lr` and `dir/hr`. A file present on one side
/// only is an error.
pub fn scan_dataset_dir(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let (lr_dir, hr_dir) = (dir.join("lr"), dir.join("hr"));
    if !lr_dir.is_dir() || !hr_dir.is_dir() {
        return Err(data_err!("{}: expected `lr/` and `hr/` subdirectories", dir.display()));
    }
    let lr = image_names(&lr_dir)?;
    let hr = image_names(&hr_dir)?;
    let unmatched: Vec<&String> = lr
        .iter()
        .filter(|n| !hr.contains(n))
        .chain(hr.iter().filter(|n| !lr.contains(n)))
        .collect();
    if !unmatched.is_empty() {
        return Err(data_err!("{}: files without a partner: {:?}", dir.display(), unmatched));
    }
    Ok(lr.iter().map(|n| (lr_dir.join(n), hr_dir.join(n))).collect())
}

/// One `lr_path<TAB>hr_path` line per pair. Relative paths are resolved
/// against the manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| FluoError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((lr, hr)) = line.split_once('\t') else {
            return Err(data_err!("{}:{}: expected `lr_path<TAB>hr_path`", path.display(), i + 1));
        };
        out.push((base.join(lr), base.join(hr)));
    }
    Ok(out)
}

/// Writes paths relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, entries: &[(PathBuf, PathBuf)]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::new();
    for (lr, hr) in entries {
        text.push_str(&format!("{}\t{}\n", rel(lr), rel(hr)));
    }
    fs::write(path, text).map_err(|e| FluoError::io(path, e))
}

/// Every pair that loads, and a reason for every pair that does not.
pub fn load_pairs(entries: &[(PathBuf, PathBuf)]) -> (Vec<ImagePair>, Vec<String>) {
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for (lr, hr) in entries {
        match load_image_pair(lr, hr) {
            Ok(p) => pairs.push(p),
            Err(e) => failures.push(e.to_string()),
        }
    }
    (pairs, failures)
}

/// Loads all pairs, failing on the first bad or duplicate-id pair.
pub fn load_dataset(entries: &[(PathBuf, PathBuf)]) -> Result<Vec<ImagePair>> {
    let (pairs, failures) = load_pairs(entries);
    if let Some(first) = failures.first() {
        return Err(data_err!("{} of {} pairs invalid; first: {first}", failures.len(), entries.len()));
    }
    let mut ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(data_err!("duplicate pair id `{}`", w[0]));
    }
    Ok(pairs)
}

/// Writes pairs as 16-bit PNGs under `dir/lr` and `dir/hr` plus
/// `dir/manifest.tsv`, returning the manifest path.
pub fn write_dataset(dir: &Path, pairs: &[ImagePair]) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let name = format!("{}.png", p.id);
        let (lr, hr) = (dir.join("lr").join(&name), dir.join("hr").join(&name));
        save_image(&lr, &p.lr, BitDepth::Sixteen)?;
        save_image(&hr, &p.hr, BitDepth::Sixteen)?;
        entries.push((lr, hr));
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Manifest file as given, or the pairs of a dataset directory.
pub fn resolve_entries(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if path.is_dir() {
        scan_dataset_dir(path)
    } else {
        read_manifest(path)
    }
}

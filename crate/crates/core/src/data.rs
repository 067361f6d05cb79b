//! Paired LR/HR images, patch extraction, augmentation and batching.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, shape_err, Result};
use crate::image::GrayImage;
use crate::init::derive_seed;
use crate::real::Real;
use crate::tensor::Tensor;

/// A low-resolution image and its 2x high-resolution counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub lr: GrayImage,
    pub hr: GrayImage,
    pub id: String,
}

impl ImagePair {
    /// Checks the 2x size relation and that all values are in `[0, 1]`.
    pub fn new(lr: GrayImage, hr: GrayImage, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let (h, w) = lr.dims();
        if hr.dims() != (2 * h, 2 * w) {
            return Err(shape_err!(
                "image pair",
                "`{}`: LR is {}x{} so HR must be {}x{}, got {}x{}",
                id,
                h,
                w,
                2 * h,
                2 * w,
                hr.height(),
                hr.width()
            ));
        }
        if !lr.is_normalized() || !hr.is_normalized() {
            return Err(arg_err!("image pair", "`{}`: values must be finite and in [0, 1]", id));
        }
        Ok(Self { lr, hr, id })
    }
}

/// Coherent patches: `hr` was cut at twice `lr_origin` with twice the side.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr: GrayImage,
    pub hr: GrayImage,
    /// `(row, col)` in the source LR image.
    pub lr_origin: (usize, usize),
    pub id: String,
}

/// Patches along one axis for the given geometry.
pub fn patch_count(dim: usize, patch_size: usize, stride: usize) -> usize {
    if patch_size > dim || stride == 0 {
        0
    } else {
        (dim - patch_size) / stride + 1
    }
}

/// `patch_size * (1 - overlap)`, which must be a positive integer.
pub fn patch_stride(patch_size: usize, overlap_fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(arg_err!("extract_patches", "overlap {} outside [0, 1)", overlap_fraction));
    }
    let s = patch_size as f64 * (1.0 - overlap_fraction);
    let r = Float::round(s);
    if r < 1.0 || Float::abs(s - r) > 1e-9 {
        return Err(arg_err!(
            "extract_patches",
            "stride {} * (1 - {}) = {} is not a positive integer",
            patch_size,
            overlap_fraction,
            s
        ));
    }
    Ok(r as usize)
}

/// Grid of patch pairs in row-major order. Trailing rows or columns that do
/// not fit a whole patch are skipped.
pub fn extract_patches(pair: &ImagePair, patch_size: usize, overlap_fraction: f64) -> Result<Vec<PatchPair>> {
    let (h, w) = pair.lr.dims();
    if patch_size == 0 || patch_size > h || patch_size > w {
        return Err(arg_err!(
            "extract_patches",
            "patch {} does not fit {}x{} image `{}`",
            patch_size,
            h,
            w,
            pair.id
        ));
    }
    let stride = patch_stride(patch_size, overlap_fraction)?;
    let (ny, nx) = (patch_count(h, patch_size, stride), patch_count(w, patch_size, stride));
    let mut out = Vec::with_capacity(ny * nx);
    for py in 0..ny {
        for px in 0..nx {
            let (r, c) = (py * stride, px * stride);
            out.push(PatchPair {
                lr: pair.lr.crop(r, c, patch_size, patch_size)?,
                hr: pair.hr.crop(2 * r, 2 * c, 2 * patch_size, 2 * patch_size)?,
                lr_origin: (r, c),
                id: pair.id.clone(),
            });
        }
    }
    Ok(out)
}

/// Which geometric transforms an augmentation applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentationOutcome {
    pub transformed: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl AugmentationOutcome {
    /// A fair coin decides whether to transform; if so, each of the three
    /// transforms is drawn with its own fair coin.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if !rng.random_bool(0.5) {
            return Self::default();
        }
        Self {
            transformed: true,
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            rot90: rng.random_bool(0.5),
        }
    }

    /// Horizontal flip, then vertical flip, then a counterclockwise quarter turn.
    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        let mut out = img.clone();
        if !self.transformed {
            return out;
        }
        if self.hflip {
            out = out.hflip();
        }
        if self.vflip {
            out = out.vflip();
        }
        if self.rot90 {
            out = out.rot90_ccw();
        }
        out
    }
}

/// Applies one randomly drawn transform to both members of the pair.
pub fn augment<R: Rng + ?Sized>(pair: &PatchPair, rng: &mut R) -> (PatchPair, AugmentationOutcome) {
    let outcome = AugmentationOutcome::draw(rng);
    let out = PatchPair {
        lr: outcome.apply(&pair.lr),
        hr: outcome.apply(&pair.hr),
        lr_origin: pair.lr_origin,
        id: pair.id.clone(),
    };
    (out, outcome)
}

/// Seeded permutation of whole pairs.
pub fn shuffle_pairs<P>(mut pairs: Vec<P>, seed: u64) -> Vec<P> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    pairs
}

/// Stacked patches: `lr` is `N x 1 x P x P`, `hr` is `N x 1 x 2P x 2P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// Position of the batch within its epoch.
    pub index: usize,
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    /// `(id, lr_origin)` of each member, in batch order.
    pub sources: Vec<(String, (usize, usize))>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

fn stack<T: Real>(imgs: &[&GrayImage]) -> Result<Tensor<T>> {
    let (h, w) = imgs.first().map_or((0, 0), |i| i.dims());
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for img in imgs {
        if img.dims() != (h, w) {
            return Err(shape_err!("make_batches", "patch {:?} differs from {:?}", img.dims(), (h, w)));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64(f64::from(v))));
    }
    Tensor::new([imgs.len(), 1, h, w], data)
}

/// Consecutive chunks of `batch_size`; the last partial chunk is kept
/// unless `drop_last`.
pub fn make_batches<T: Real>(pairs: &[PatchPair], batch_size: usize, drop_last: bool) -> Result<Vec<Batch<T>>> {
    if batch_size == 0 {
        return Err(arg_err!("make_batches", "batch_size must be at least 1"));
    }
    let mut out = Vec::new();
    for (index, chunk) in pairs.chunks(batch_size).enumerate() {
        if drop_last && chunk.len() < batch_size {
            break;
        }
        let lr: Vec<&GrayImage> = chunk.iter().map(|p| &p.lr).collect();
        let hr: Vec<&GrayImage> = chunk.iter().map(|p| &p.hr).collect();
        out.push(Batch {
            index,
            lr: stack(&lr)?,
            hr: stack(&hr)?,
            sources: chunk.iter().map(|p| (p.id.clone(), p.lr_origin)).collect(),
        });
    }
    Ok(out)
}

/// Seed of the augmentation and shuffle stream for one epoch.
pub fn epoch_seed(seed: u64, phase: u8, epoch: usize) -> u64 {
    derive_seed(derive_seed(seed, u64::from(phase)), epoch as u64)
}

/// One epoch of training data: every patch freshly augmented, then
/// shuffled and batched. Reproducible from `(seed, phase, epoch)`.
pub fn epoch_batches<T: Real>(
    patches: &[PatchPair],
    batch_size: usize,
    drop_last: bool,
    seed: u64,
    phase: u8,
    epoch: usize,
) -> Result<Vec<Batch<T>>> {
    let s = epoch_seed(seed, phase, epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let augmented: Vec<PatchPair> = patches.iter().map(|p| augment(p, &mut rng).0).collect();
    let shuffled = shuffle_pairs(augmented, derive_seed(s, 1));
    make_batches(&shuffled, batch_size, drop_last)
}

/// Splits off `fraction` of the pairs (at least one when there are two or
/// more) for validation, chosen by a seeded shuffle of the ids. Both halves
/// keep the input order.
pub fn split_validation(pairs: Vec<ImagePair>, fraction: f64, seed: u64) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(arg_err!("validation split", "fraction {} outside [0, 1)", fraction));
    }
    let n = pairs.len();
    let n_val = if n < 2 || fraction == 0.0 {
        0
    } else {
        (Float::round(n as f64 * fraction) as usize).clamp(1, n - 1)
    };
    let mut ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    let chosen: Vec<String> = shuffle_pairs(ids, seed)
        .into_iter()
        .take(n_val)
        .map(String::from)
        .collect();
    Ok(pairs.into_iter().partition(|p| !chosen.contains(&p.id)))
}

/// Degrades a clean HR image: 2x box downsampling, additive Gaussian noise
/// of std `sigma`, and signal-dependent shot noise of std
/// `sigma * sqrt(signal)`, clipped to `[0, 1]`.
pub fn degrade<R: Rng + ?Sized>(hr: &GrayImage, sigma: f64, rng: &mut R) -> Result<GrayImage> {
    if !(sigma >= 0.0) {
        return Err(arg_err!("degrade", "noise sigma {} must be non-negative", sigma));
    }
    let mut lr = hr.box_downsample2()?;
    if sigma == 0.0 {
        return Ok(lr);
    }
    for v in lr.data_mut() {
        let s = f64::from(*v);
        let g: f64 = StandardNormal.sample(rng);
        let p: f64 = StandardNormal.sample(rng);
        let noisy = s + sigma * g + sigma * Float::sqrt(s.max(0.0)) * p;
        *v = noisy.clamp(0.0, 1.0) as f32;
    }
    Ok(lr)
}

/// Procedural fluorescence-like HR image: a faint smooth background, large
/// soft cells and small bright puncta.
pub fn synthetic_hr<R: Rng + ?Sized>(size: usize, rng: &mut R) -> GrayImage {
    let s = size as f64;
    let mut acc = alloc::vec![0.0f64; size * size];

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = core::f64::consts::TAU / (s * rng.random_range(0.25..1.0));
            let angle = rng.random_range(0.0..core::f64::consts::PI);
            (freq * Float::cos(angle), freq * Float::sin(angle), rng.random_range(0.0..core::f64::consts::TAU), rng.random_range(0.01..0.04))
        })
        .collect();
    for r in 0..size {
        for c in 0..size {
            let mut v = 0.08;
            for &(fx, fy, ph, amp) in &waves {
                v += amp * Float::sin(fx * c as f64 + fy * r as f64 + ph);
            }
            acc[r * size + c] = v;
        }
    }

    let mut blob = |cy: f64, cx: f64, sigma: f64, amp: f64| {
        let reach = 3.0 * sigma;
        let r0 = (cy - reach).max(0.0) as usize;
        let r1 = ((cy + reach) as usize + 1).min(size);
        let c0 = (cx - reach).max(0.0) as usize;
        let c1 = ((cx + reach) as usize + 1).min(size);
        for r in r0..r1 {
            for c in c0..c1 {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                acc[r * size + c] += amp * Float::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            }
        }
    };
    let cells = 3 + size * size / 4096;
    for _ in 0..cells {
        let sigma = rng.random_range(s / 40.0 + 1.5..s / 14.0 + 2.0);
        blob(rng.random_range(0.0..s), rng.random_range(0.0..s), sigma, rng.random_range(0.2..0.5));
    }
    let puncta = 4 + size * size / 512;
    for _ in 0..puncta {
        blob(
            rng.random_range(0.0..s),
            rng.random_range(0.0..s),
            rng.random_range(0.7..1.8),
            rng.random_range(0.2..0.6),
        );
    }
    GrayImage::from_fn(size, size, |r, c| acc[r * size + c].clamp(0.0, 1.0) as f32)
}

/// `count` synthetic pairs with `size x size` HR and `size/2` LR images.
/// Pair `i` depends only on `(seed, i)`.
pub fn generate_synthetic_dataset(count: usize, size: usize, noise_sigma: f64, seed: u64) -> Result<Vec<ImagePair>> {
    if size == 0 || size % 2 != 0 {
        return Err(arg_err!("synthetic dataset", "HR size {} must be even and positive", size));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(arg_err!("synthetic dataset", "noise sigma {} must be non-negative", noise_sigma));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let hr = synthetic_hr(size, &mut rng);
            let lr = degrade(&hr, noise_sigma, &mut rng)?;
            ImagePair::new(lr, hr, format!("synthetic_{i:04}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pair(lr: usize) -> ImagePair {
        let hr = GrayImage::from_fn(2 * lr, 2 * lr, |r, c| ((r * 7 + c * 3) % 17) as f32 / 16.0);
        let lr_img = hr.box_downsample2().unwrap();
        ImagePair::new(lr_img, hr, "p").unwrap()
    }

    #[test]
    fn large_geometry_gives_225_patches() {
        let patches = extract_patches(&pair(512), 64, 0.5).unwrap();
        assert_eq!(patches.len(), 225);
        assert_eq!(patches[1].lr_origin, (0, 32));
        assert_eq!(patches[15].lr_origin, (32, 0));
    }

    #[test]
    fn patch_equal_to_image_gives_one() {
        for ov in [0.0, 0.25, 0.5, 0.75] {
            let p = extract_patches(&pair(64), 64, ov).unwrap();
            assert_eq!(p.len(), 1);
            assert_eq!(p[0].lr_origin, (0, 0));
        }
    }

    #[test]
    fn bad_patch_geometry_rejected() {
        assert!(extract_patches(&pair(32), 64, 0.5).is_err());
        assert!(extract_patches(&pair(64), 10, 0.25).is_err());
        assert!(extract_patches(&pair(64), 16, 1.0).is_err());
    }

    #[test]
    fn pair_size_mismatch_reports_both_sizes() {
        let e = ImagePair::new(GrayImage::zeros(8, 8), GrayImage::zeros(8, 8), "x").unwrap_err();
        let msg = alloc::string::ToString::to_string(&e);
        assert!(msg.contains("8x8") && msg.contains("16x16"), "{msg}");
    }

    #[test]
    fn batch_counts() {
        let p = extract_patches(&pair(32), 8, 0.0).unwrap();
        assert_eq!(p.len(), 16);
        let b = make_batches::<f32>(&p, 5, false).unwrap();
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![5, 5, 5, 1]);
        assert_eq!(b[0].lr.shape(), &[5, 1, 8, 8]);
        assert_eq!(b[0].hr.shape(), &[5, 1, 16, 16]);
        assert_eq!(make_batches::<f32>(&p, 5, true).unwrap().len(), 3);
        assert!(make_batches::<f32>(&p, 0, false).is_err());
    }

    #[test]
    fn forced_no_transform_is_identity() {
        let p = &extract_patches(&pair(16), 8, 0.0).unwrap()[3];
        let o = AugmentationOutcome::default();
        assert_eq!(o.apply(&p.lr), p.lr);
    }

    #[test]
    fn synthetic_is_deterministic_and_noise_free_when_sigma_zero() {
        let a = generate_synthetic_dataset(2, 32, 0.0, 9).unwrap();
        let b = generate_synthetic_dataset(2, 32, 0.0, 9).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert_eq!(p.lr, p.hr.box_downsample2().unwrap());
        }
        assert!(generate_synthetic_dataset(1, 31, 0.0, 9).is_err());
    }

    #[test]
    fn validation_split_holds_out_ten_percent() {
        let pairs = generate_synthetic_dataset(20, 16, 0.0, 1).unwrap();
        let (train, val) = split_validation(pairs.clone(), 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (18, 2));
        assert!(val.iter().all(|v| !train.iter().any(|t| t.id == v.id)));
        let (_, val2) = split_validation(pairs[..2].to_vec(), 0.1, 3).unwrap();
        assert_eq!(val2.len(), 1);
    }
}

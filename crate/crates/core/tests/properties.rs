//! Invariants checked over generated inputs.

use fluosr_core::data::{augment, extract_patches, shuffle_pairs, split_validation, ImagePair, PatchPair};
use fluosr_core::metrics::{psnr, ssim};
use fluosr_core::models::GeneratorConfig;
use fluosr_core::tiling::{tile_starts, upscale, upscale_tiled, TileConfig};
use fluosr_core::trainer::TrainSchedule;
use fluosr_core::{GrayImage, ParamStore};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |d| GrayImage::new(h, w, d).unwrap())
}

fn sized_image(max: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| image(h, w))
}

/// HR whose 2x2 blocks are constant, so box downsampling gives back `lr` exactly.
fn replicate(lr: &GrayImage) -> GrayImage {
    GrayImage::from_fn(2 * lr.height(), 2 * lr.width(), |r, c| lr.get(r / 2, c / 2))
}

fn tiny_generator() -> (GeneratorConfig, ParamStore<f32>) {
    let cfg = GeneratorConfig {
        num_rrdb: 1,
        base_channels: 4,
        growth_channels: 2,
        convs_per_dense_block: 2,
        dense_blocks_per_rrdb: 1,
        init_scale: 1.0,
        ..GeneratorConfig::default()
    };
    let params = cfg.init(1).unwrap();
    (cfg, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_keeps_pairs_coherent(lr in (1usize..=6).prop_flat_map(|s| image(s, s)), seed in any::<u64>()) {
        let pair = PatchPair { hr: replicate(&lr), lr, lr_origin: (3, 5), id: "p".into() };
        let (out, _) = augment(&pair, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&out.hr, &replicate(&out.lr));
        prop_assert_eq!(out.hr.box_downsample2().unwrap(), out.lr);
        prop_assert_eq!(out.lr_origin, pair.lr_origin);
    }

    #[test]
    fn shuffling_preserves_the_multiset(n in 0usize..40, seed in any::<u64>()) {
        let items: Vec<(String, (usize, usize))> = (0..n).map(|i| (format!("id{}", i % 5), (i, i / 3))).collect();
        let mut a = shuffle_pairs(items.clone(), seed);
        let mut b = items;
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn patches_are_coherent_crops(lr in (8usize..=20, 8usize..=20).prop_flat_map(|(h, w)| image(h, w)),
                                  patch in 2usize..=8, half in any::<bool>()) {
        let hr = replicate(&lr);
        let overlap = if half && patch % 2 == 0 { 0.5 } else { 0.0 };
        let pair = ImagePair::new(lr.clone(), hr.clone(), "x").unwrap();
        let patches = extract_patches(&pair, patch, overlap).unwrap();
        let stride = if overlap > 0.0 { patch / 2 } else { patch };
        let n = |d: usize| (d - patch) / stride + 1;
        prop_assert_eq!(patches.len(), n(lr.height()) * n(lr.width()));
        for p in &patches {
            let (r, c) = p.lr_origin;
            prop_assert_eq!(&p.lr, &lr.crop(r, c, patch, patch).unwrap());
            prop_assert_eq!(&p.hr, &hr.crop(2 * r, 2 * c, 2 * patch, 2 * patch).unwrap());
        }
    }

    #[test]
    fn tile_starts_cover_the_axis(dim in 1usize..300, tile in 1usize..64, overlap_frac in 0.0f64..0.9) {
        let overlap = ((tile as f64) * overlap_frac) as usize;
        prop_assume!(overlap < tile);
        let starts = tile_starts(dim, tile, overlap);
        prop_assert_eq!(starts[0], 0);
        prop_assert!(starts.windows(2).all(|w| w[0] < w[1] && w[1] <= w[0] + tile - overlap));
        let last = *starts.last().unwrap();
        prop_assert_eq!(last + tile.min(dim), dim);
    }

    #[test]
    fn psnr_is_symmetric_and_ssim_bounded(a in image(12, 12), b in image(12, 12)) {
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s = ssim(&a, &b, 1.0).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule_is_geometric(lr in 1e-6f64..1.0, decay in 0.01f64..=1.0, epoch in 0usize..30) {
        let s = TrainSchedule { lr_initial: lr, lr_decay_per_epoch: decay, ..TrainSchedule::default() };
        let next = s.lr_at_epoch(epoch + 1);
        prop_assert!((next - s.lr_at_epoch(epoch) * decay).abs() <= 1e-12 * lr);
        prop_assert!(next <= s.lr_at_epoch(epoch));
    }

    #[test]
    fn validation_split_partitions_the_pairs(n in 1usize..30, frac in 0.0f64..0.9, seed in any::<u64>()) {
        let pairs: Vec<ImagePair> = (0..n)
            .map(|i| ImagePair::new(GrayImage::zeros(1, 1), GrayImage::zeros(2, 2), format!("img{i:02}")).unwrap())
            .collect();
        let (train, val) = split_validation(pairs, frac, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), n);
        if n >= 2 && frac > 0.0 {
            prop_assert!(!val.is_empty() && !train.is_empty());
        }
        prop_assert!(val.iter().all(|v| train.iter().all(|t| t.id != v.id)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_is_twice_the_input(img in sized_image(12)) {
        let (cfg, params) = tiny_generator();
        let out = upscale(&params, &cfg, &img).unwrap();
        prop_assert_eq!(out.dims(), (2 * img.height(), 2 * img.width()));
    }

    #[test]
    fn tiling_matches_the_whole_image(img in (10usize..=24, 10usize..=24).prop_flat_map(|(h, w)| image(h, w)),
                                      tile in 4usize..=10, overlap in 0usize..4) {
        prop_assume!(overlap < tile);
        let (cfg, params) = tiny_generator();
        let whole = upscale(&params, &cfg, &img).unwrap();
        let tiled = upscale_tiled(&params, &cfg, &img, &TileConfig { tile, overlap, context: None }).unwrap();
        prop_assert_eq!(whole.dims(), tiled.dims());
        let worst = whole.data().iter().zip(tiled.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(worst < 1e-4, "max difference {}", worst);
    }
}

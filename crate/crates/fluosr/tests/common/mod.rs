#![allow(dead_code)]

use std::path::Path;

use fluosr::config::{Precision, RunConfig};
use fluosr_core::data::{generate_synthetic_dataset, ImagePair};
use fluosr_core::models::{FeatureExtractorConfig, GeneratorConfig, Truncation};

/// Networks small enough for a whole two-phase run in about a second.
pub fn tiny_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::toy();
    c.patch_size = 8;
    c.generator = GeneratorConfig {
        num_rrdb: 1,
        base_channels: 4,
        growth_channels: 2,
        convs_per_dense_block: 2,
        dense_blocks_per_rrdb: 1,
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
    c.schedule.seed = 7;
    c.precision = Precision::F64;
    c.output_dir = out.to_path_buf();
    c
}

/// Four 32x32 HR / 16x16 LR pairs.
pub fn tiny_pairs() -> Vec<ImagePair> {
    generate_synthetic_dataset(4, 32, 0.05, 3).unwrap()
}

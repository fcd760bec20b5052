#![allow(dead_code)]

use std::path::Path;

use metadefa::{DatasetConfig, RunConfig};
use metadefa_core::{SyntheticSpec, TinyCnnConfig};

/// A run small enough for unit-scale tests: 16×16 images, two conv blocks,
/// two epochs, two seeds.
pub fn tiny_config(out: &Path) -> RunConfig {
    let mut config = RunConfig {
        dataset: DatasetConfig::Synthetic {
            spec: SyntheticSpec {
                per_class: 10,
                image_size: 16,
                ..SyntheticSpec::default()
            },
            seed: 3,
        },
        model: TinyCnnConfig {
            widths: vec![4, 6],
            input_size: 16,
            ..TinyCnnConfig::default()
        },
        output_dir: out.to_path_buf(),
        seeds: vec![0, 1],
        ..RunConfig::default()
    };
    config.meta.epochs = 2;
    config.meta.pool_size = 2;
    config.meta.tasks_per_iteration = 1;
    config.meta.batch_size = 4;
    config
}

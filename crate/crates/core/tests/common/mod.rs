#![allow(dead_code)]

pub mod reference;
pub mod specs;

use std::path::{Path, PathBuf};

use mrirecon::data::{generate_dataset, Dataset, DatasetSpec};
use mrirecon::train::TrainConfig;

/// Small models that train in well under a second per step at 32×32.
pub const TINY: &str = "\
batch_size = 2
g.depth = 2
g.base_channels = 4
g.tap_levels = 0,1
g.pairs = 2
g.rrdb_count = 1
g.fusion_channels = 4
g.head_channels = 4
g.head_growth = 2
g.lcfi_dilations = 1,2
g.lcfi_channels = 2
g.cbam_reduction = 2
g.cbam_kernel = 3
d.base_channels = 4
";

pub fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("mrirecon-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

pub fn tiny_dataset(count: usize, seed: u64) -> Dataset {
    generate_dataset(&DatasetSpec { count, size: 32, seed, ..DatasetSpec::default() }).unwrap()
}

/// Writes a tiny dataset into `dir/data` and returns a config pointing at it.
pub fn tiny_setup(dir: &Path, count: usize, steps: usize) -> TrainConfig {
    let data = dir.join("data");
    tiny_dataset(count, 3).save(&data).unwrap();
    let mut c = TrainConfig::parse(TINY).unwrap();
    c.data = data;
    c.total_steps = steps;
    c.checkpoint_interval = 0;
    c
}

#![allow(dead_code)]

pub mod oracle;

use std::path::Path;

use ssdda_core::data::{generate_dataset, Dataset, DatasetCounts, DomainShift, SceneSpec};
use ssdda_core::model::NetworkConfig;
use ssdda_core::train::TrainConfig;

pub fn small_spec() -> SceneSpec {
    SceneSpec {
        height: 24,
        width: 24,
        ..SceneSpec::default()
    }
}

/// 30 source and 40 target scenes at 24x24.
pub fn small_dataset(root: &Path) -> Dataset {
    let counts = DatasetCounts {
        n_source: 30,
        n_target: 40,
    };
    let generated = generate_dataset(&small_spec(), &DomainShift::default(), counts, root, 5).unwrap();
    Dataset::from_manifest(generated.manifest).unwrap()
}

pub fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        lr0: 0.03,
        eval_every: 10,
        checkpoint_every: 20,
        network: NetworkConfig {
            hidden_channels: vec![6, 6],
            ..NetworkConfig::default()
        },
        ..TrainConfig::default().with_seed(3)
    }
}

//! Synthetic two-domain benchmark, raster I/O and target splits.

mod dataset;
pub mod netpbm;
mod split;
pub mod synth;

pub use dataset::{
    generate_dataset, item_id, item_rng, Dataset, DatasetCounts, DatasetManifest, Generated, ManifestEntry, Sample,
    MANIFEST_FILE,
};
pub use split::{make_splits, sample_batch, split_file_name, Batch, SplitSpec, DEFAULT_VAL_FRACTION};
pub use synth::{generate_scene, Domain, DomainShift, SceneSpec};

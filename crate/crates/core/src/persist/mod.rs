//! File formats: checkpoints, config text, metrics CSV and run manifests.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod metrics;

pub use config::ConfigMap;
pub use manifest::RunManifest;
pub use metrics::{MetricsRow, METRICS_HEADER};

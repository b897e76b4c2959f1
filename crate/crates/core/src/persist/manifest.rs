//! Run manifests: everything needed to reproduce a command, stored in the
//! config text format next to the checkpoint (`<name>.meta.txt`).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::persist::config::ConfigMap;
use crate::train::TrainConfig;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub dataset_root: PathBuf,
    pub dataset_checksum: u32,
    pub n_labeled: usize,
    pub split_seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub seed: u64,
    /// Config keys whose file value was replaced by a command-line flag.
    pub overrides: Vec<String>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `final.ssda` -> `final.meta.txt`.
pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta.txt")
}

impl RunManifest {
    pub fn to_config_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        m.set("run.version", &self.version);
        m.set("run.seed", self.seed);
        m.set("run.started", self.started);
        m.set("run.finished", self.finished);
        m.set("run.overrides", self.overrides.join(","));
        m.set("data.root", self.dataset_root.display());
        m.set("data.checksum", format!("{:08x}", self.dataset_checksum));
        m.set("data.labels", self.n_labeled);
        m.set("data.split_seed", self.split_seed);
        for (k, v) in self.config.to_config_map().iter() {
            m.set(format!("train.{k}"), v);
        }
        m
    }

    pub fn from_config_map(m: &ConfigMap, path: &Path) -> Result<Self> {
        let need = |k: &str| m.get(k).ok_or_else(|| Error::format(path, format!("missing key {k}")));
        let num = |k: &str| -> Result<u64> {
            need(k)?
                .parse()
                .map_err(|_| Error::format(path, format!("{k} is not an integer")))
        };
        let checksum = u32::from_str_radix(need("data.checksum")?, 16)
            .map_err(|_| Error::format(path, "data.checksum is not hex"))?;
        let overrides = need("run.overrides")?;
        Ok(Self {
            config: TrainConfig::from_config_map(&m.section("train"))?,
            dataset_root: PathBuf::from(need("data.root")?),
            dataset_checksum: checksum,
            n_labeled: num("data.labels")? as usize,
            split_seed: num("data.split_seed")?,
            version: need("run.version")?.to_string(),
            started: num("run.started")?,
            finished: num("run.finished")?,
            seed: num("run.seed")?,
            overrides: overrides.split(',').filter(|s| !s.is_empty()).map(String::from).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_map().to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_config_map(&ConfigMap::read(path)?, path)
    }
}

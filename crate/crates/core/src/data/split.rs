//! Labeled / unlabeled / validation partition of the target domain, and
//! mini-batch sampling.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::DatasetManifest;
use super::synth::Domain;
use crate::error::{Error, Result};

pub const DEFAULT_VAL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub val: Vec<String>,
    pub seed: u64,
}

pub fn split_file_name(n_labeled: usize, seed: u64) -> String {
    format!("split_{n_labeled}_{seed}.txt")
}

/// Uniform random partition of the target ids.
///
/// The validation set is drawn first and labeled ids are a prefix of the
/// remaining permutation, so for a fixed seed the validation set is the same
/// for every `n_labeled` and larger labeled sets contain smaller ones.
pub fn make_splits(manifest: &DatasetManifest, n_labeled: usize, val_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidSplit(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let mut ids: Vec<String> = manifest.ids(Domain::Target).into_iter().map(String::from).collect();
    ids.sort();
    let n_val = (val_fraction * ids.len() as f64).round() as usize;
    let pool = ids.len() - n_val;
    if n_labeled > pool {
        return Err(Error::InvalidSplit(format!(
            "{n_labeled} labeled targets requested but only {pool} non-validation targets exist"
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let unlabeled = ids.split_off(n_val + n_labeled);
    let labeled = ids.split_off(n_val);
    Ok(SplitSpec {
        labeled,
        unlabeled,
        val: ids,
        seed,
    })
}

impl SplitSpec {
    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    /// Checks disjointness and that the sections cover exactly the target ids.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.labeled.iter().chain(&self.unlabeled).chain(&self.val) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidSplit(format!("id {id:?} appears more than once")));
            }
        }
        let targets: HashSet<&str> = manifest.ids(Domain::Target).into_iter().collect();
        if seen != targets {
            return Err(Error::InvalidSplit(format!(
                "split covers {} ids, manifest has {} target ids",
                seen.len(),
                targets.len()
            )));
        }
        Ok(())
    }

    pub fn section(&self, name: &str) -> Result<&[String]> {
        match name {
            "labeled" => Ok(&self.labeled),
            "unlabeled" => Ok(&self.unlabeled),
            "val" => Ok(&self.val),
            other => Err(Error::InvalidInput(format!("unknown split section {other:?}"))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [("labeled", &self.labeled), ("unlabeled", &self.unlabeled), ("val", &self.val)] {
            out.push_str(&format!("[{name}]\n"));
            for id in ids {
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    /// Parses the section format. The seed is not part of the file body and is
    /// supplied by the caller (it is encoded in the file name).
    pub fn parse(text: &str, seed: u64, path: &Path) -> Result<Self> {
        let mut split = SplitSpec {
            labeled: Vec::new(),
            unlabeled: Vec::new(),
            val: Vec::new(),
            seed,
        };
        let mut current: Option<&mut Vec<String>> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(match name {
                    "labeled" => &mut split.labeled,
                    "unlabeled" => &mut split.unlabeled,
                    "val" => &mut split.val,
                    other => return Err(Error::format(path, format!("line {}: unknown section [{other}]", n + 1))),
                });
                continue;
            }
            match current.as_deref_mut() {
                Some(list) => list.push(line.to_string()),
                None => return Err(Error::format(path, format!("line {}: id outside any section", n + 1))),
            }
        }
        Ok(split)
    }

    pub fn path(&self, root: &Path) -> PathBuf {
        root.join(split_file_name(self.n_labeled(), self.seed))
    }

    pub fn write(&self, root: &Path) -> Result<bool> {
        super::netpbm::write_if_changed(&self.path(root), self.to_text().as_bytes())
    }

    pub fn read(root: &Path, n_labeled: usize, seed: u64) -> Result<Self> {
        let path = root.join(split_file_name(n_labeled, seed));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let split = Self::parse(&text, seed, &path)?;
        if split.n_labeled() != n_labeled {
            return Err(Error::format(
                &path,
                format!("file name says {n_labeled} labeled ids, [labeled] has {}", split.n_labeled()),
            ));
        }
        Ok(split)
    }
}

/// One training mini-batch, by id: one labeled source image, two labeled
/// target images and the unlabeled mixing pair `(a, b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source: String,
    pub target_labeled: [String; 2],
    pub target_unlabeled: [String; 2],
}

fn distinct_pair<R: Rng + ?Sized>(pool: &[String], rng: &mut R) -> [String; 2] {
    let idx = sample(rng, pool.len(), 2);
    [pool[idx.index(0)].clone(), pool[idx.index(1)].clone()]
}

pub fn sample_batch<R: Rng + ?Sized>(source_ids: &[String], split: &SplitSpec, rng: &mut R) -> Result<Batch> {
    if source_ids.is_empty() {
        return Err(Error::InvalidSplit("no source images".into()));
    }
    if split.labeled.len() < 2 {
        return Err(Error::InvalidSplit(format!(
            "need at least 2 labeled targets, split has {}",
            split.labeled.len()
        )));
    }
    if split.unlabeled.len() < 2 {
        return Err(Error::InvalidSplit(format!(
            "need at least 2 unlabeled targets, split has {}",
            split.unlabeled.len()
        )));
    }
    let source = source_ids[rng.gen_range(0..source_ids.len())].clone();
    let target_labeled = distinct_pair(&split.labeled, rng);
    let target_unlabeled = distinct_pair(&split.unlabeled, rng);
    Ok(Batch {
        source,
        target_labeled,
        target_unlabeled,
    })
}

//! On-disk dataset layout: `images/<id>.ppm`, `labels/<id>.pgm` and a
//! tab-separated `manifest.txt`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::netpbm::{read_label_pgm, read_ppm, write_if_changed, write_label_pgm, write_ppm};
use super::synth::{generate_scene, Domain, DomainShift, SceneSpec};
use crate::error::{Error, Result};
use crate::raster::{LabelMap, SegImage};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetCounts {
    pub n_source: usize,
    pub n_target: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        Self {
            n_source: 500,
            n_target: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Domain,
    /// Relative to the dataset root.
    pub image: PathBuf,
    pub label: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Stable id of the `index`-th item of a domain.
pub fn item_id(domain: Domain, index: usize) -> String {
    match domain {
        Domain::Source => format!("s{index:04}"),
        Domain::Target => format!("t{index:04}"),
    }
}

/// Independent generator stream for one item, so items can be produced in any
/// order (or in parallel) with identical results.
pub fn item_rng(seed: u64, domain: Domain, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain_bit = match domain {
        Domain::Source => 0,
        Domain::Target => 1u64 << 32,
    };
    rng.set_stream(domain_bit | index as u64);
    rng
}

impl DatasetManifest {
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.id,
                e.domain,
                e.image.display(),
                e.label.display()
            ));
        }
        out
    }

    pub fn parse(root: &Path, text: &str) -> Result<Self> {
        let manifest = root.join(MANIFEST_FILE);
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |reason: String| Error::format(&manifest, format!("line {}: {reason}", n + 1));
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let domain: Domain = fields[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            if !seen.insert(fields[0].to_string()) {
                return Err(bad(format!("duplicate id {:?}", fields[0])));
            }
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                domain,
                image: PathBuf::from(fields[2]),
                label: PathBuf::from(fields[3]),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    /// Reads `<root>/manifest.txt` and checks that every listed file exists.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m = Self::parse(root, &text)?;
        for e in &m.entries {
            for rel in [&e.image, &e.label] {
                let p = root.join(rel);
                if !p.is_file() {
                    return Err(Error::format(&path, format!("{}: missing file {}", e.id, p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn ids(&self, domain: Domain) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.domain == domain)
            .map(|e| e.id.as_str())
            .collect()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.entries.iter().filter(|e| e.domain == domain).count()
    }

    /// CRC32 over the manifest and every referenced file, in manifest order.
    pub fn checksum(&self) -> Result<u32> {
        let mut h = crc32fast::Hasher::new();
        h.update(self.to_text().as_bytes());
        for e in &self.entries {
            for rel in [&e.image, &e.label] {
                let p = self.root.join(rel);
                h.update(&std::fs::read(&p).map_err(|err| Error::io(&p, err))?);
            }
        }
        Ok(h.finalize())
    }
}

/// Result of [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub manifest: DatasetManifest,
    /// Files whose contents actually changed; zero on an idempotent rerun.
    pub files_written: usize,
}

pub fn generate_dataset(
    spec: &SceneSpec,
    shift: &DomainShift,
    counts: DatasetCounts,
    out_dir: &Path,
    seed: u64,
) -> Result<Generated> {
    spec.validate()?;
    let mut entries = Vec::with_capacity(counts.n_source + counts.n_target);
    let mut files_written = 0;
    for (domain, n) in [(Domain::Source, counts.n_source), (Domain::Target, counts.n_target)] {
        for index in 0..n {
            let id = item_id(domain, index);
            let (image, labels) = generate_scene(spec, domain, shift, &mut item_rng(seed, domain, index))?;
            let entry = ManifestEntry {
                image: PathBuf::from(format!("images/{id}.ppm")),
                label: PathBuf::from(format!("labels/{id}.pgm")),
                id,
                domain,
            };
            files_written += usize::from(write_ppm(&out_dir.join(&entry.image), &image)?);
            files_written += usize::from(write_label_pgm(&out_dir.join(&entry.label), &labels)?);
            entries.push(entry);
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    files_written += usize::from(write_if_changed(&manifest.manifest_path(), manifest.to_text().as_bytes())?);
    Ok(Generated {
        manifest,
        files_written,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub image: SegImage,
    pub labels: LabelMap,
}

/// A manifest with every raster loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    samples: Vec<Sample>,
    index: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        Self::from_manifest(DatasetManifest::load(root)?)
    }

    pub fn from_manifest(manifest: DatasetManifest) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.entries.len());
        let mut index = BTreeMap::new();
        for e in &manifest.entries {
            let image = read_ppm(&manifest.root.join(&e.image))?;
            let label_path = manifest.root.join(&e.label);
            let labels = read_label_pgm(&label_path)?;
            if labels.height() != image.height() || labels.width() != image.width() {
                return Err(Error::format(
                    &label_path,
                    format!(
                        "label map {}x{} does not match image {}x{}",
                        labels.height(),
                        labels.width(),
                        image.height(),
                        image.width()
                    ),
                ));
            }
            index.insert(e.id.clone(), samples.len());
            samples.push(Sample {
                id: e.id.clone(),
                domain: e.domain,
                image,
                labels,
            });
        }
        Ok(Self {
            manifest,
            samples,
            index,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, id: &str) -> Result<&Sample> {
        self.index
            .get(id)
            .map(|&i| &self.samples[i])
            .ok_or_else(|| Error::InvalidSplit(format!("id {id:?} is not in the dataset")))
    }

    /// Largest label id present, plus one (IGNORE excluded).
    pub fn num_classes_seen(&self) -> usize {
        self.samples
            .iter()
            .flat_map(|s| s.labels.data().iter())
            .filter(|&&l| l != crate::raster::IGNORE)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdda_core::data::netpbm::{read_label_pgm, read_ppm, write_label_pgm, write_mask_pgm, write_ppm};
use ssdda_core::data::synth::CLASS_NAMES;
use ssdda_core::data::{
    generate_dataset, make_splits, Dataset, DatasetCounts, DatasetManifest, DomainShift, SceneSpec, SplitSpec,
};
use ssdda_core::persist::config::ConfigMap;
use ssdda_core::persist::manifest::{meta_path, unix_now, RunManifest, VERSION};
use ssdda_core::persist::{checkpoint, MetricsRow};
use ssdda_core::train::{
    run_ablation, run_training, student_params, RunOptions, TrainConfig, TrainMode, FINAL_CHECKPOINT,
};
use ssdda_core::{evaluate, generate_mask, init_network, mix_images, mix_labels, Error, MixConfig, Role, SegNetwork};

use crate::{AblateArgs, EvalArgs, GenDataArgs, InitArgs, MixPreviewArgs, TrainArgs};

pub type Result<T> = std::result::Result<T, Error>;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

pub const SEED_ENV: &str = "SSDDA_SEED";

/// Flag, then `SSDDA_SEED`.
fn seed_or_env(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

/// Exclusive marker file; removed on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join(".ssdda.lock");
        OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::InvalidInput(format!(
                    "{} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                ))
            } else {
                io(&path, e)
            }
        })?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let seed = seed_or_env(a.seed)?.unwrap_or(0);
    let spec = SceneSpec {
        height: a.size,
        width: a.size,
        seed,
        ..SceneSpec::default()
    };
    let shift = if a.no_shift { DomainShift::none() } else { DomainShift::default() };
    let counts = DatasetCounts {
        n_source: a.n_source,
        n_target: a.n_target,
    };
    let _lock = DirLock::acquire(&a.out)?;
    let generated = generate_dataset(&spec, &shift, counts, &a.out, seed)?;
    let mut written = generated.files_written;
    for &n in &a.splits {
        let split = make_splits(&generated.manifest, n, a.val_fraction, seed)?;
        written += usize::from(split.write(&a.out)?);
    }
    let checksum = generated.manifest.checksum()?;
    if written == 0 {
        println!("{}: up to date (checksum {checksum:08x})", a.out.display());
    } else {
        println!(
            "{}: {} source + {} target items, {written} files written (checksum {checksum:08x})",
            a.out.display(),
            a.n_source,
            a.n_target
        );
    }
    Ok(())
}

/// Reads `split_<n>_<seed>.txt` if present, otherwise derives the split.
fn load_split(data: &Path, manifest: &DatasetManifest, n: usize, seed: u64, val_fraction: f64) -> Result<SplitSpec> {
    let path = data.join(ssdda_core::data::split_file_name(n, seed));
    let split = if path.is_file() {
        SplitSpec::read(data, n, seed)?
    } else {
        make_splits(manifest, n, val_fraction, seed)?
    };
    split.validate(manifest)?;
    Ok(split)
}

fn read_config(path: Option<&Path>) -> Result<ConfigMap> {
    match path {
        Some(p) => ConfigMap::read(p),
        None => Ok(ConfigMap::new()),
    }
}

/// Defaults, then the config file, then flags. Returns the config and the
/// config-file keys a flag replaced.
pub fn resolve_train_config(a: &TrainArgs) -> Result<(TrainConfig, Vec<String>)> {
    let file = read_config(a.config.as_deref())?;
    let mut cfg = TrainConfig::default();
    cfg.apply(&file)?;
    let mut flags = ConfigMap::new();
    // The environment seed is only a fallback for a file without one.
    let seed = match a.seed {
        Some(s) => Some(s),
        None if file.get("seed").is_none() => seed_or_env(None)?,
        None => None,
    };
    if let Some(seed) = seed {
        for key in ["seed", "network.seed", "mix.rng_seed"] {
            flags.set(key, seed);
        }
    }
    if let Some(m) = &a.mode {
        flags.set("mode", m);
    }
    if let Some(m) = &a.mix {
        flags.set("mix.variant", m);
    }
    if let Some(p) = a.p {
        flags.set("mix.block_count", p);
    }
    if let Some(v) = a.iterations {
        flags.set("iterations", v);
    }
    if let Some(v) = a.lr0 {
        flags.set("lr0", v);
    }
    if let Some(v) = a.lambda {
        flags.set("lambda", v);
    }
    if let Some(v) = a.ema_alpha {
        flags.set("ema_alpha", v);
    }
    let overrides = flags
        .iter()
        .filter(|(k, v)| file.get(k).is_some_and(|fv| fv != *v))
        .map(|(k, _)| k.to_string())
        .collect();
    cfg.apply(&flags)?;
    cfg.validate()?;
    Ok((cfg, overrides))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let started = unix_now();
    let (cfg, overrides) = resolve_train_config(a)?;
    let split_seed = a.split_seed.unwrap_or(cfg.seed);
    let dataset = Dataset::load(&a.data)?;
    let split = load_split(&a.data, dataset.manifest(), a.labels, split_seed, a.val_fraction)?;
    let out = a.out.clone().unwrap_or_else(|| {
        a.data
            .join("runs")
            .join(format!("{}-n{}-s{}", cfg.mode, a.labels, cfg.seed))
    });
    let _lock = DirLock::acquire(&out)?;
    for key in &overrides {
        eprintln!("note: flag overrides config file value of {key}");
    }
    let quiet = a.quiet;
    let mut progress = |row: &MetricsRow| {
        if let (false, Some(m)) = (quiet, row.val_miou) {
            eprintln!("iter {:>6}  val mIoU {:.2}", row.iter, 100.0 * m);
        }
    };
    let outcome = run_training(
        &cfg,
        &dataset,
        &split,
        RunOptions {
            out_dir: Some(&out),
            resume: a.resume.as_deref(),
            on_row: Some(&mut progress),
        },
    )?;
    let final_ckpt = out.join(FINAL_CHECKPOINT);
    let manifest = RunManifest {
        seed: cfg.seed,
        config: cfg,
        dataset_root: a.data.clone(),
        dataset_checksum: dataset.manifest().checksum()?,
        n_labeled: a.labels,
        split_seed,
        version: VERSION.to_string(),
        started,
        finished: unix_now(),
        overrides,
    };
    manifest.write(&meta_path(&final_ckpt))?;
    println!(
        "final val mIoU {:.2} after {} iterations; checkpoint {}",
        100.0 * outcome.final_miou().unwrap_or(f64::NAN),
        outcome.state.iteration(),
        final_ckpt.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let params = student_params(checkpoint::load(&a.checkpoint)?)?;
    let net = SegNetwork::from_params(params, Role::Student)?;
    let dataset = Dataset::load(&a.data)?;
    let split_seed = seed_or_env(a.split_seed)?.unwrap_or(0);
    let split = load_split(&a.data, dataset.manifest(), a.labels, split_seed, a.val_fraction)?;
    let ids = split.section(&a.section)?;
    let items = ids
        .iter()
        .map(|id| dataset.get(id).map(|s| (&s.image, &s.labels)))
        .collect::<Result<Vec<_>>>()?;
    let cm = evaluate(&net, items)?;
    let all: Vec<usize> = (0..cm.num_classes()).collect();
    let subset = a.classes.clone().unwrap_or(all);
    println!("{:<4} {:<12} {:>8}", "id", "class", "IoU");
    for (k, iou) in cm.iou_per_class().iter().enumerate() {
        let name = CLASS_NAMES.get(k).copied().unwrap_or("?");
        let value = iou.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let marker = if subset.contains(&k) { "" } else { " (excluded)" };
        println!("{k:<4} {name:<12} {value:>8}{marker}");
    }
    let miou = cm.mean_iou(&subset)?;
    println!("mIoU {:.2} over {} classes, {} images", 100.0 * miou, subset.len(), ids.len());
    Ok(())
}

pub fn mix_preview(a: &MixPreviewArgs) -> Result<()> {
    let xa = read_ppm(&a.image_a)?;
    let ya = read_label_pgm(&a.label_a)?;
    let xb = read_ppm(&a.image_b)?;
    let yb = read_label_pgm(&a.label_b)?;
    let cfg = MixConfig {
        variant: a.variant.parse()?,
        block_count: a.p,
        rng_seed: seed_or_env(a.seed)?.unwrap_or(0),
    };
    cfg.validate()?;
    let mask = generate_mask(&ya, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.rng_seed))?;
    let image = mix_images(&xa, &xb, &mask)?;
    let labels = mix_labels(&ya, &yb, &mask)?;
    write_mask_pgm(&a.out.join("mask.pgm"), &mask)?;
    write_ppm(&a.out.join("mixed.ppm"), &image)?;
    write_label_pgm(&a.out.join("mixed_label.pgm"), &labels)?;
    println!(
        "{}: mask covers {} of {} pixels",
        a.out.display(),
        mask.count_ones(),
        mask.height() * mask.width()
    );
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.apply(&read_config(a.config.as_deref())?)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let modes = a
        .modes
        .iter()
        .map(|m| m.parse::<TrainMode>())
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::load(&a.data)?;
    let table = run_ablation(&cfg, &dataset, &modes, &a.labels, &a.seeds, a.val_fraction, |c| {
        eprintln!("N_t={:<4} seed={:<4} {:<11} mIoU {:.2}", c.n_labeled, c.seed, c.mode.to_string(), 100.0 * c.miou);
    })?;
    print!("{table}");
    if let Some(path) = &a.report {
        std::fs::write(path, table.to_string()).map_err(|e| io(path, e))?;
    }
    Ok(())
}

pub fn init(a: &InitArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.apply(&read_config(a.config.as_deref())?)?;
    if let Some(seed) = seed_or_env(a.seed)? {
        cfg.network.seed = seed;
    }
    let net = init_network(&cfg.network)?;
    checkpoint::save(&a.out, net.params())?;
    println!("{}: {} parameters", a.out.display(), net.params().numel());
    Ok(())
}

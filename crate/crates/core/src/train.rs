//! Student / EMA-teacher training loop.
//!
//! Every iteration draws one labeled source image, two labeled target images
//! and an unlabeled target pair `(a, b)`. The student is trained on
//! `L_s + L_t + lambda * L_u`, where `L_t` averages the two labeled-target
//! cross-entropies and `L_u` is the cross-entropy of the student on the mixed
//! image `x_ab` against mixed teacher pseudo-labels. The teacher then follows
//! the student by EMA.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_splits, sample_batch, Batch, Dataset, Domain, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::losses::{ce_loss, LossReport};
use crate::mixing::{generate_mask, mix_images, mix_labels, MixConfig};
use crate::model::{ema_update, init_network, NetworkConfig, Role, SegNetwork};
use crate::params::{Param, ParamSet};
use crate::persist::checkpoint;
use crate::persist::config::{format_list, parse_list, ConfigMap};
use crate::persist::metrics::{MetricsRow, MetricsWriter};
use crate::pseudo::argmax_label;
use crate::raster::{LabelMap, MixMask, SegImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainMode {
    /// Source + labeled target supervision only (`L_u = 0`).
    CrossOnly,
    /// Labeled target supervision + consistency (`L_s = 0`).
    IntraOnly,
    Dual,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::CrossOnly, TrainMode::IntraOnly, TrainMode::Dual];

    pub fn uses_source(self) -> bool {
        self != TrainMode::IntraOnly
    }

    pub fn uses_consistency(self) -> bool {
        self != TrainMode::CrossOnly
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Dual => "dual",
            TrainMode::CrossOnly => "cross-only",
            TrainMode::IntraOnly => "intra-only",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(TrainMode::Dual),
            "cross-only" | "cross_only" => Ok(TrainMode::CrossOnly),
            "intra-only" | "intra_only" => Ok(TrainMode::IntraOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// How source and labeled target images are combined in the supervised term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossMixMode {
    /// Joint mini-batch through the shared student.
    Batch,
    /// Experimental: the source image is mask-mixed with the first labeled
    /// target image (mask built from the source labels) before `L_s`.
    Pixel,
}

impl fmt::Display for CrossMixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrossMixMode::Batch => "batch",
            CrossMixMode::Pixel => "pixel",
        })
    }
}

impl FromStr for CrossMixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(CrossMixMode::Batch),
            "pixel" => Ok(CrossMixMode::Pixel),
            other => Err(Error::InvalidConfig(format!("unknown cross_mix_mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub lambda: f64,
    pub ema_alpha: f64,
    pub mix: MixConfig,
    pub mode: TrainMode,
    pub cross_mix_mode: CrossMixMode,
    /// Drives batch sampling.
    pub seed: u64,
    pub network: NetworkConfig,
    pub eval_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr0: 2.5e-4,
            weight_decay: 5e-4,
            momentum: 0.9,
            poly_power: 0.9,
            lambda: 1.0,
            ema_alpha: 0.99,
            mix: MixConfig::default(),
            mode: TrainMode::Dual,
            cross_mix_mode: CrossMixMode::Batch,
            seed: 0,
            network: NetworkConfig::default(),
            eval_every: 250,
            checkpoint_every: 500,
        }
    }
}

/// Keys understood by [`TrainConfig::apply`], in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "iterations",
    "lr0",
    "weight_decay",
    "momentum",
    "poly_power",
    "lambda",
    "ema_alpha",
    "mode",
    "cross_mix_mode",
    "seed",
    "eval_every",
    "checkpoint_every",
    "mix.variant",
    "mix.block_count",
    "mix.rng_seed",
    "network.in_channels",
    "network.num_classes",
    "network.hidden_channels",
    "network.kernel_size",
    "network.seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return bad(format!("ema_alpha must be in [0, 1], got {}", self.ema_alpha));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.poly_power >= 0.0 && self.poly_power.is_finite()) {
            return bad(format!("poly_power must be non-negative, got {}", self.poly_power));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 {
            return bad("eval_every and checkpoint_every must be positive".into());
        }
        self.mix.validate()?;
        self.network.validate()
    }

    /// Sets the sampling, initialisation and mask seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.network.seed = seed;
        self.mix.rng_seed = seed;
        self
    }

    /// Overrides fields from `map`. Unknown keys are rejected.
    pub fn apply(&mut self, map: &ConfigMap) -> Result<()> {
        for key in map.keys() {
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
            }
        }
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = map.parse_value($key)? {
                    $field = v;
                }
            };
        }
        set!("iterations", self.iterations);
        set!("lr0", self.lr0);
        set!("weight_decay", self.weight_decay);
        set!("momentum", self.momentum);
        set!("poly_power", self.poly_power);
        set!("lambda", self.lambda);
        set!("ema_alpha", self.ema_alpha);
        set!("mode", self.mode);
        set!("cross_mix_mode", self.cross_mix_mode);
        set!("seed", self.seed);
        set!("eval_every", self.eval_every);
        set!("checkpoint_every", self.checkpoint_every);
        set!("mix.variant", self.mix.variant);
        set!("mix.block_count", self.mix.block_count);
        set!("mix.rng_seed", self.mix.rng_seed);
        set!("network.in_channels", self.network.in_channels);
        set!("network.num_classes", self.network.num_classes);
        if let Some(v) = map.get("network.hidden_channels") {
            self.network.hidden_channels = parse_list("network.hidden_channels", v)?;
        }
        set!("network.kernel_size", self.network.kernel_size);
        set!("network.seed", self.network.seed);
        Ok(())
    }

    pub fn from_config_map(map: &ConfigMap) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(map)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field, in [`CONFIG_KEYS`] order.
    pub fn to_config_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        m.set("iterations", self.iterations);
        m.set("lr0", self.lr0);
        m.set("weight_decay", self.weight_decay);
        m.set("momentum", self.momentum);
        m.set("poly_power", self.poly_power);
        m.set("lambda", self.lambda);
        m.set("ema_alpha", self.ema_alpha);
        m.set("mode", self.mode);
        m.set("cross_mix_mode", self.cross_mix_mode);
        m.set("seed", self.seed);
        m.set("eval_every", self.eval_every);
        m.set("checkpoint_every", self.checkpoint_every);
        m.set("mix.variant", self.mix.variant);
        m.set("mix.block_count", self.mix.block_count);
        m.set("mix.rng_seed", self.mix.rng_seed);
        m.set("network.in_channels", self.network.in_channels);
        m.set("network.num_classes", self.network.num_classes);
        m.set("network.hidden_channels", format_list(&self.network.hidden_channels));
        m.set("network.kernel_size", self.network.kernel_size);
        m.set("network.seed", self.network.seed);
        m
    }
}

/// `lr0 * (1 - iter / iterations)^poly_power`.
pub fn lr_schedule(cfg: &TrainConfig, iter: usize) -> f64 {
    let frac = 1.0 - iter.min(cfg.iterations) as f64 / cfg.iterations as f64;
    cfg.lr0 * frac.powf(cfg.poly_power)
}

/// Generator for iteration `iteration` of a stream family. Batch sampling and
/// mask drawing use disjoint families so equal seeds do not correlate them.
fn iteration_rng(seed: u64, iteration: usize, family: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((family << 63) | iteration as u64);
    rng
}

pub fn batch_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    iteration_rng(seed, iteration, 0)
}

pub fn mask_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    iteration_rng(seed, iteration, 1)
}

/// A batch with its rasters resolved.
#[derive(Debug, Clone, Copy)]
pub struct BatchData<'a> {
    pub source: (&'a SegImage, &'a LabelMap),
    pub target_labeled: [(&'a SegImage, &'a LabelMap); 2],
    pub target_unlabeled: [&'a SegImage; 2],
}

impl<'a> BatchData<'a> {
    pub fn resolve(dataset: &'a Dataset, batch: &Batch) -> Result<Self> {
        let pair = |id: &str| dataset.get(id).map(|s| (&s.image, &s.labels));
        Ok(Self {
            source: pair(&batch.source)?,
            target_labeled: [pair(&batch.target_labeled[0])?, pair(&batch.target_labeled[1])?],
            target_unlabeled: [
                &dataset.get(&batch.target_unlabeled[0])?.image,
                &dataset.get(&batch.target_unlabeled[1])?.image,
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub mask: MixMask,
    pub image: SegImage,
    pub labels: LabelMap,
}

/// Teacher pseudo-labels for `a` and `b`, a mask from the pseudo-labels of
/// `a`, and the mixed image / label pair.
pub fn mixed_sample<R: rand::Rng + ?Sized>(
    teacher: &SegNetwork,
    a: &SegImage,
    b: &SegImage,
    mix: &MixConfig,
    rng: &mut R,
) -> Result<MixedSample> {
    let ya = argmax_label(&teacher.predict(a)?);
    let yb = argmax_label(&teacher.predict(b)?);
    let mask = generate_mask(&ya, mix, rng)?;
    Ok(MixedSample {
        image: mix_images(a, b, &mask)?,
        labels: mix_labels(&ya, &yb, &mask)?,
        mask,
    })
}

fn cross_mixed_sample<R: rand::Rng + ?Sized>(
    source: (&SegImage, &LabelMap),
    target: (&SegImage, &LabelMap),
    mix: &MixConfig,
    rng: &mut R,
) -> Result<MixedSample> {
    let mask = generate_mask(source.1, mix, rng)?;
    Ok(MixedSample {
        image: mix_images(source.0, target.0, &mask)?,
        labels: mix_labels(source.1, target.1, &mask)?,
        mask,
    })
}

/// Loss terms and their parameter gradients.
#[derive(Debug, Clone)]
pub struct Objective {
    pub report: LossReport,
    pub grads: ParamSet,
}

/// Cross-entropy of one image, with `weight * dCE/dtheta` accumulated into
/// `grads`. Returns `(loss, valid pixels)`.
fn term(student: &SegNetwork, x: &SegImage, y: &LabelMap, weight: f64, grads: &mut ParamSet) -> Result<(f64, usize)> {
    let (probs, trace) = student.forward(x)?;
    let ce = ce_loss(&probs, y)?;
    if weight != 0.0 {
        student.backward_into(&trace, &ce.grad.scaled(weight), grads)?;
    }
    Ok((ce.loss, ce.valid_pixels))
}

/// `L_s + L_t + lambda * L_u` and its gradient for fixed inputs and targets.
/// Absent terms count as zero.
pub fn objective(
    student: &SegNetwork,
    source: Option<(&SegImage, &LabelMap)>,
    target_labeled: &[(&SegImage, &LabelMap); 2],
    unlabeled: Option<(&SegImage, &LabelMap)>,
    lambda: f64,
) -> Result<Objective> {
    let mut grads = student.params().zeros_like();
    let mut report = LossReport {
        lambda,
        ..Default::default()
    };
    if let Some((x, y)) = source {
        (report.source, report.source_pixels) = term(student, x, y, 1.0, &mut grads)?;
    }
    for &(x, y) in target_labeled {
        let (loss, px) = term(student, x, y, 0.5, &mut grads)?;
        report.target += 0.5 * loss;
        report.target_pixels += px;
    }
    if let Some((x, y)) = unlabeled {
        (report.unlabeled, report.unlabeled_pixels) = term(student, x, y, lambda, &mut grads)?;
    }
    let report = report
        .finalize()
        .map_err(|(r, e)| Error::Numeric(format!("{e}; step losses: {r}")))?;
    Ok(Objective { report, grads })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v = momentum * v + (g + weight_decay * theta)`, `theta -= lr * v`.
pub fn sgd_step(params: &mut ParamSet, velocity: &mut ParamSet, grads: &ParamSet, hp: SgdParams) -> Result<()> {
    params.ensure_compatible(velocity)?;
    params.ensure_compatible(grads)?;
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads.iter()) {
        for ((theta, vel), &grad) in p.values.iter_mut().zip(v.values.iter_mut()).zip(&g.values) {
            *vel = hp.momentum * *vel + grad + hp.weight_decay * *theta;
            *theta -= hp.lr * *vel;
        }
    }
    Ok(())
}

const TEACHER_PREFIX: &str = "teacher/";
const VELOCITY_PREFIX: &str = "velocity/";
const ITERATION_KEY: &str = "state/iteration";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    iteration: usize,
    student: SegNetwork,
    teacher: SegNetwork,
    velocity: ParamSet,
}

impl TrainState {
    /// Fresh student, teacher as an exact copy, zero velocity.
    pub fn new(network: &NetworkConfig) -> Result<Self> {
        let student = init_network(network)?;
        Ok(Self {
            iteration: 0,
            teacher: student.to_teacher(),
            velocity: student.params().zeros_like(),
            student,
        })
    }

    pub fn from_parts(iteration: usize, student: SegNetwork, teacher: SegNetwork, velocity: ParamSet) -> Result<Self> {
        if student.role() != Role::Student || teacher.role() != Role::Teacher {
            return Err(Error::InvalidInput("student / teacher roles swapped".into()));
        }
        student.params().ensure_compatible(teacher.params())?;
        student.params().ensure_compatible(&velocity)?;
        Ok(Self {
            iteration,
            student,
            teacher,
            velocity,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn student(&self) -> &SegNetwork {
        &self.student
    }

    pub fn teacher(&self) -> &SegNetwork {
        &self.teacher
    }

    pub fn velocity(&self) -> &ParamSet {
        &self.velocity
    }

    /// Student parameters under their own names, followed by the teacher,
    /// the velocity and the iteration counter under prefixed names.
    pub fn to_checkpoint(&self) -> Result<ParamSet> {
        let mut out = self.student.params().clone();
        for (prefix, set) in [(TEACHER_PREFIX, self.teacher.params()), (VELOCITY_PREFIX, &self.velocity)] {
            for p in set {
                out.push(Param::new(format!("{prefix}{}", p.name), p.shape.clone(), p.values.clone())?)?;
            }
        }
        out.push(Param::new(ITERATION_KEY, vec![1], vec![self.iteration as f64])?)?;
        Ok(out)
    }

    pub fn from_checkpoint(entries: ParamSet) -> Result<Self> {
        let mut student = Vec::new();
        let mut teacher = Vec::new();
        let mut velocity = Vec::new();
        let mut iteration = None;
        for p in entries.into_params() {
            if let Some(name) = p.name.strip_prefix(TEACHER_PREFIX) {
                teacher.push(Param::new(name, p.shape, p.values)?);
            } else if let Some(name) = p.name.strip_prefix(VELOCITY_PREFIX) {
                velocity.push(Param::new(name, p.shape, p.values)?);
            } else if p.name == ITERATION_KEY {
                iteration = p.values.first().copied();
            } else {
                student.push(p);
            }
        }
        let iteration = iteration.ok_or_else(|| {
            Error::IncompatibleParams("checkpoint has no training state (weights only)".into())
        })?;
        Self::from_parts(
            iteration as usize,
            SegNetwork::from_params(ParamSet::from_params(student)?, Role::Student)?,
            SegNetwork::from_params(ParamSet::from_params(teacher)?, Role::Teacher)?,
            ParamSet::from_params(velocity)?,
        )
    }
}

/// Student weights from a checkpoint, dropping any training state entries.
pub fn student_params(entries: ParamSet) -> Result<ParamSet> {
    ParamSet::from_params(entries.into_params().into_iter().filter(|p| !p.name.contains('/')).collect())
}

/// One optimisation step. The teacher is only touched by the EMA update at the end.
pub fn train_step(state: &mut TrainState, batch: &BatchData<'_>, cfg: &TrainConfig) -> Result<LossReport> {
    let it = state.iteration;
    let mut rng = mask_rng(cfg.mix.rng_seed, it);
    let cross = if cfg.mode.uses_source() && cfg.cross_mix_mode == CrossMixMode::Pixel {
        Some(cross_mixed_sample(batch.source, batch.target_labeled[0], &cfg.mix, &mut rng)?)
    } else {
        None
    };
    let source = cfg
        .mode
        .uses_source()
        .then(|| cross.as_ref().map_or(batch.source, |m| (&m.image, &m.labels)));
    let intra = if cfg.mode.uses_consistency() {
        let [a, b] = batch.target_unlabeled;
        Some(mixed_sample(&state.teacher, a, b, &cfg.mix, &mut rng)?)
    } else {
        None
    };
    let obj = objective(
        &state.student,
        source,
        &batch.target_labeled,
        intra.as_ref().map(|m| (&m.image, &m.labels)),
        cfg.lambda,
    )?;
    let hp = SgdParams {
        lr: lr_schedule(cfg, it),
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    sgd_step(state.student.params_mut(), &mut state.velocity, &obj.grads, hp)?;
    let blended = ema_update(state.teacher.params(), state.student.params(), cfg.ema_alpha)?;
    state.teacher.set_params(blended)?;
    state.iteration += 1;
    Ok(obj.report)
}

/// Mean IoU of the student over every class on `ids`.
pub fn validate_miou(net: &SegNetwork, dataset: &Dataset, ids: &[String]) -> Result<f64> {
    let items = ids
        .iter()
        .map(|id| dataset.get(id).map(|s| (&s.image, &s.labels)))
        .collect::<Result<Vec<_>>>()?;
    evaluate(net, items)?.mean_iou_all()
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ssda";

pub fn periodic_checkpoint_name(iteration: usize) -> String {
    format!("ckpt_{iteration:06}.{}", checkpoint::EXTENSION)
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Where checkpoints and `metrics.csv` go; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    /// Checkpoint to continue from.
    pub resume: Option<&'a Path>,
    pub on_row: Option<&'a mut dyn FnMut(&MetricsRow)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn final_miou(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|r| r.val_miou)
    }

    pub fn initial_miou(&self) -> Option<f64> {
        self.metrics.iter().find(|r| r.iter == 0).and_then(|r| r.val_miou)
    }
}

/// Runs `cfg.iterations` steps, evaluating on the validation ids at iteration
/// 0, every `eval_every` iterations and at the end.
pub fn run_training(cfg: &TrainConfig, dataset: &Dataset, split: &SplitSpec, mut opts: RunOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    split.validate(dataset.manifest())?;
    if split.labeled.len() < 2 || split.unlabeled.len() < 2 {
        return Err(Error::InvalidSplit(format!(
            "training needs at least 2 labeled and 2 unlabeled targets, split has {} and {}",
            split.labeled.len(),
            split.unlabeled.len()
        )));
    }
    if split.val.is_empty() {
        return Err(Error::InvalidSplit("validation section is empty".into()));
    }
    let source_ids: Vec<String> = dataset
        .manifest()
        .ids(Domain::Source)
        .into_iter()
        .map(String::from)
        .collect();

    let (mut state, mut metrics) = match opts.resume {
        Some(path) => {
            let state = TrainState::from_checkpoint(checkpoint::load(path)?)?;
            let expected = init_network(&cfg.network)?;
            state.student.params().ensure_compatible(expected.params())?;
            if state.iteration > cfg.iterations {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint is at iteration {} but the run has only {}",
                    state.iteration, cfg.iterations
                )));
            }
            let previous = match opts.out_dir.map(|d| d.join(METRICS_FILE)) {
                Some(p) if p.is_file() => crate::persist::metrics::read_csv(&p)?,
                _ => Vec::new(),
            };
            let kept = previous.into_iter().filter(|r| r.iter <= state.iteration).collect();
            (state, kept)
        }
        None => (TrainState::new(&cfg.network)?, Vec::new()),
    };

    let mut writer = match opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(MetricsWriter::create(&dir.join(METRICS_FILE), &metrics)?)
        }
        None => None,
    };
    let mut emit = |row: MetricsRow, metrics: &mut Vec<MetricsRow>| -> Result<()> {
        if let Some(w) = writer.as_mut() {
            w.append(&row)?;
        }
        if let Some(cb) = opts.on_row.as_mut() {
            cb(&row);
        }
        metrics.push(row);
        Ok(())
    };

    if state.iteration == 0 && metrics.is_empty() {
        let miou = validate_miou(&state.student, dataset, &split.val)?;
        emit(
            MetricsRow {
                iter: 0,
                losses: None,
                lr: None,
                val_miou: Some(miou),
            },
            &mut metrics,
        )?;
    }

    while state.iteration < cfg.iterations {
        let it = state.iteration;
        let batch = sample_batch(&source_ids, split, &mut batch_rng(cfg.seed, it))?;
        let data = BatchData::resolve(dataset, &batch)?;
        let lr = lr_schedule(cfg, it);
        let report = train_step(&mut state, &data, cfg)?;
        let done = state.iteration;
        let val_miou = if done % cfg.eval_every == 0 || done == cfg.iterations {
            Some(validate_miou(&state.student, dataset, &split.val)?)
        } else {
            None
        };
        emit(
            MetricsRow {
                iter: done,
                losses: Some(report),
                lr: Some(lr),
                val_miou,
            },
            &mut metrics,
        )?;
        if let Some(dir) = opts.out_dir {
            if done % cfg.checkpoint_every == 0 && done != cfg.iterations {
                checkpoint::save(&dir.join(periodic_checkpoint_name(done)), &state.to_checkpoint()?)?;
            }
        }
    }
    if let Some(dir) = opts.out_dir {
        checkpoint::save(&dir.join(FINAL_CHECKPOINT), &state.to_checkpoint()?)?;
    }
    Ok(TrainOutcome { state, metrics })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub mode: TrainMode,
    pub n_labeled: usize,
    pub seed: u64,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub modes: Vec<TrainMode>,
    pub split_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    fn values(&self, mode: TrainMode, n_labeled: usize) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.mode == mode && c.n_labeled == n_labeled)
            .map(|c| c.miou)
            .collect()
    }

    pub fn mean(&self, mode: TrainMode, n_labeled: usize) -> Option<f64> {
        let v = self.values(mode, n_labeled);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Sample standard deviation (zero for a single seed).
    pub fn std(&self, mode: TrainMode, n_labeled: usize) -> Option<f64> {
        let v = self.values(mode, n_labeled);
        let mean = self.mean(mode, n_labeled)?;
        if v.len() < 2 {
            return Some(0.0);
        }
        Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
    }
}

impl fmt::Display for AblationTable {
    /// Mode rows by labeled-target columns, mIoU in points as `mean ± std`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<12}", "mode")?;
        for n in &self.split_sizes {
            write!(f, " {:>16}", format!("N_t={n}"))?;
        }
        writeln!(f)?;
        for &mode in &self.modes {
            write!(f, "{:<12}", mode.to_string())?;
            for &n in &self.split_sizes {
                let cell = match (self.mean(mode, n), self.std(mode, n)) {
                    (Some(m), Some(s)) => format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s),
                    _ => "-".to_string(),
                };
                write!(f, " {cell:>16}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One full run per (labeled budget, mode, seed). The split for a seed is
/// shared by every mode so the comparison is paired.
pub fn run_ablation(
    base: &TrainConfig,
    dataset: &Dataset,
    modes: &[TrainMode],
    split_sizes: &[usize],
    seeds: &[u64],
    val_fraction: f64,
    mut on_cell: impl FnMut(&AblationCell),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for &n in split_sizes {
        for &seed in seeds {
            let split = make_splits(dataset.manifest(), n, val_fraction, seed)?;
            for &mode in modes {
                let cfg = TrainConfig {
                    mode,
                    ..base.clone().with_seed(seed)
                };
                let outcome = run_training(&cfg, dataset, &split, RunOptions::default())?;
                let cell = AblationCell {
                    mode,
                    n_labeled: n,
                    seed,
                    miou: outcome.final_miou().expect("final evaluation row"),
                };
                on_cell(&cell);
                cells.push(cell);
            }
        }
    }
    Ok(AblationTable {
        modes: modes.to_vec(),
        split_sizes: split_sizes.to_vec(),
        seeds: seeds.to_vec(),
        cells,
    })
}

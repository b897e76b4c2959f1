mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdda_core::data::{make_splits, sample_batch, Domain};
use ssdda_core::model::ema_update;
use ssdda_core::persist::{checkpoint, ConfigMap};
use ssdda_core::train::*;
use ssdda_core::Error;
use std::path::Path;

fn first_batch<'a>(ds: &'a ssdda_core::data::Dataset, split: &ssdda_core::data::SplitSpec) -> BatchData<'a> {
    let sources: Vec<String> = ds.manifest().ids(Domain::Source).into_iter().map(String::from).collect();
    let batch = sample_batch(&sources, split, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    BatchData::resolve(ds, &batch).unwrap()
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig {
        iterations: 100,
        lr0: 0.4,
        ..TrainConfig::default()
    };
    assert_eq!(lr_schedule(&cfg, 0), 0.4);
    assert_eq!(lr_schedule(&cfg, 100), 0.0);
    let linear = TrainConfig { poly_power: 1.0, ..cfg.clone() };
    assert_eq!(lr_schedule(&linear, 50), 0.2);
    assert!((lr_schedule(&cfg, 50) - 0.4 * 0.5f64.powf(0.9)).abs() < 1e-15);
}

#[test]
fn config_map_round_trip() {
    let cfg = TrainConfig {
        lr0: 0.0123,
        mode: TrainMode::IntraOnly,
        cross_mix_mode: CrossMixMode::Pixel,
        ..TrainConfig::default().with_seed(17)
    };
    let text = cfg.to_config_map().to_text();
    let parsed = ConfigMap::parse(&text, Path::new("c")).unwrap();
    let back = TrainConfig::from_config_map(&parsed).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_config_map().to_text(), text);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let p = Path::new("c");
    assert!(TrainConfig::from_config_map(&ConfigMap::parse("lr = 1\n", p).unwrap()).is_err());
    assert!(TrainConfig::from_config_map(&ConfigMap::parse("lr0 = 0\n", p).unwrap()).is_err());
    assert!(TrainConfig::from_config_map(&ConfigMap::parse("ema_alpha = 1.5\n", p).unwrap()).is_err());
    assert!(TrainConfig::from_config_map(&ConfigMap::parse("mode = both\n", p).unwrap()).is_err());
}

#[test]
fn cross_only_has_no_consistency_term_and_teacher_follows_ema() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 1).unwrap();
    let cfg = TrainConfig {
        mode: TrainMode::CrossOnly,
        ..common::small_config(10)
    };
    let mut state = TrainState::new(&cfg.network).unwrap();
    let teacher_before = state.teacher().params().clone();
    let report = train_step(&mut state, &first_batch(&ds, &split), &cfg).unwrap();
    assert_eq!(report.unlabeled, 0.0);
    assert_eq!(report.unlabeled_pixels, 0);
    assert!(report.source > 0.0 && report.target > 0.0);
    let expected = ema_update(&teacher_before, state.student().params(), cfg.ema_alpha).unwrap();
    assert_eq!(state.teacher().params(), &expected);
}

#[test]
fn intra_only_has_no_source_term() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 1).unwrap();
    let cfg = TrainConfig {
        mode: TrainMode::IntraOnly,
        ..common::small_config(10)
    };
    let mut state = TrainState::new(&cfg.network).unwrap();
    let report = train_step(&mut state, &first_batch(&ds, &split), &cfg).unwrap();
    assert_eq!(report.source, 0.0);
    assert_eq!(report.source_pixels, 0);
    assert!(report.unlabeled > 0.0);
    assert!((report.total - (report.target + report.lambda * report.unlabeled)).abs() < 1e-12);
}

#[test]
fn zero_lambda_and_unit_alpha_freeze_the_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 1).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        ema_alpha: 1.0,
        ..common::small_config(10)
    };
    let mut state = TrainState::new(&cfg.network).unwrap();
    let before = state.teacher().params().checksum();
    let student_before = state.student().params().checksum();
    train_step(&mut state, &first_batch(&ds, &split), &cfg).unwrap();
    assert_eq!(state.teacher().params().checksum(), before);
    assert_ne!(state.student().params().checksum(), student_before);
}

#[test]
fn cross_only_equals_dual_with_zero_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 1).unwrap();
    let batch = first_batch(&ds, &split);
    let base = common::small_config(10);
    let mut a = TrainState::new(&base.network).unwrap();
    let mut b = a.clone();
    for _ in 0..3 {
        train_step(&mut a, &batch, &TrainConfig { mode: TrainMode::CrossOnly, ..base.clone() }).unwrap();
        train_step(&mut b, &batch, &TrainConfig { lambda: 0.0, ..base.clone() }).unwrap();
    }
    assert_eq!(a.student().params(), b.student().params());
    assert_eq!(a.teacher().params(), b.teacher().params());
}

#[test]
fn intra_only_equals_dual_without_source_term() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 1).unwrap();
    let batch = first_batch(&ds, &split);
    let cfg = TrainConfig {
        mode: TrainMode::IntraOnly,
        ..common::small_config(10)
    };
    let mut state = TrainState::new(&cfg.network).unwrap();
    let start = state.clone();
    train_step(&mut state, &batch, &cfg).unwrap();

    // Same step assembled by hand: teacher targets are plain data.
    let mixed = mixed_sample(
        start.teacher(),
        batch.target_unlabeled[0],
        batch.target_unlabeled[1],
        &cfg.mix,
        &mut mask_rng(cfg.mix.rng_seed, 0),
    )
    .unwrap();
    let obj = objective(start.student(), None, &batch.target_labeled, Some((&mixed.image, &mixed.labels)), cfg.lambda).unwrap();
    let mut params = start.student().params().clone();
    let mut velocity = start.velocity().clone();
    let hp = SgdParams {
        lr: lr_schedule(&cfg, 0),
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    sgd_step(&mut params, &mut velocity, &obj.grads, hp).unwrap();
    assert_eq!(state.student().params(), &params);
    assert_eq!(state.velocity(), &velocity);
}

#[test]
fn weight_decay_with_zero_gradient() {
    let state = TrainState::new(&common::small_config(1).network).unwrap();
    let theta0 = state.student().params().clone();
    let mut params = theta0.clone();
    let mut velocity = params.zeros_like();
    let zero = params.zeros_like();
    let hp = SgdParams {
        lr: 0.1,
        momentum: 0.9,
        weight_decay: 0.01,
    };
    sgd_step(&mut params, &mut velocity, &zero, hp).unwrap();
    sgd_step(&mut params, &mut velocity, &zero, hp).unwrap();
    for (p, p0) in params.iter().zip(theta0.iter()) {
        for (&t2, &t0) in p.values.iter().zip(&p0.values) {
            let v1 = 0.01 * t0;
            let t1 = t0 - 0.1 * v1;
            let v2 = 0.9 * v1 + 0.01 * t1;
            let expected = t1 - 0.1 * v2;
            assert!((t2 - expected).abs() <= 1e-15 * t0.abs().max(1.0));
            // First step alone is the plain shrink factor.
            assert!((t1 - t0 * (1.0 - 0.1 * 0.01)).abs() <= 1e-15 * t0.abs().max(1.0));
        }
    }
}

#[test]
fn teacher_cannot_backpropagate() {
    let state = TrainState::new(&common::small_config(1).network).unwrap();
    let x = ssdda_core::SegImage::filled(4, 4, 3, 0.5).unwrap();
    let (_, trace) = state.teacher().forward(&x).unwrap();
    let g = ssdda_core::LogitGrad::zeros(4, 4, 5);
    assert!(state.teacher().backward(&trace, &g).is_err());
}

#[test]
fn run_writes_metrics_and_checkpoints_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(&dir.path().join("data"));
    let split = make_splits(ds.manifest(), 8, 0.25, 2).unwrap();
    let cfg = common::small_config(45);
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let outcome = run_training(&cfg, &ds, &split, RunOptions { out_dir: Some(&out), ..Default::default() }).unwrap();
        outs.push((out, outcome));
    }
    let (a, oa) = &outs[0];
    let (b, _) = &outs[1];
    for f in [METRICS_FILE, FINAL_CHECKPOINT, "ckpt_000020.ssda", "ckpt_000040.ssda"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let evals: Vec<usize> = oa.metrics.iter().filter(|r| r.val_miou.is_some()).map(|r| r.iter).collect();
    assert_eq!(evals, vec![0, 10, 20, 30, 40, 45]);
    assert_eq!(oa.metrics.len(), 46);
    assert_eq!(ssdda_core::persist::metrics::read_csv(&a.join(METRICS_FILE)).unwrap().len(), 46);
    let state = TrainState::from_checkpoint(checkpoint::load(&a.join(FINAL_CHECKPOINT)).unwrap()).unwrap();
    assert_eq!(state.iteration(), 45);
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(&dir.path().join("data"));
    let split = make_splits(ds.manifest(), 8, 0.25, 2).unwrap();
    let out = dir.path().join("run");
    let cfg = common::small_config(40);
    run_training(&common::small_config(20), &ds, &split, RunOptions { out_dir: Some(&out), ..Default::default() }).unwrap();
    // The shorter run's final state sits at iteration 20 of the longer schedule.
    let resumed = run_training(
        &cfg,
        &ds,
        &split,
        RunOptions {
            out_dir: Some(&out),
            resume: Some(&out.join(FINAL_CHECKPOINT)),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.state.iteration(), 40);
    let iters: Vec<usize> = resumed.metrics.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (0..=40).collect::<Vec<_>>());
}

#[test]
fn training_rejects_degenerate_splits() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let cfg = common::small_config(5);
    let uda = make_splits(ds.manifest(), 0, 0.25, 1).unwrap();
    assert!(matches!(run_training(&cfg, &ds, &uda, RunOptions::default()), Err(Error::InvalidSplit(_))));
    let full = make_splits(ds.manifest(), 30, 0.25, 1).unwrap();
    assert!(full.unlabeled.is_empty());
    assert!(matches!(run_training(&cfg, &ds, &full, RunOptions::default()), Err(Error::InvalidSplit(_))));
}

#[test]
fn training_improves_over_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 4).unwrap();
    let cfg = TrainConfig {
        eval_every: 100,
        ..common::small_config(300)
    };
    let out = run_training(&cfg, &ds, &split, RunOptions::default()).unwrap();
    assert!(out.final_miou().unwrap() > out.initial_miou().unwrap());
}

#[test]
fn ablation_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let cfg = common::small_config(4);
    let table = run_ablation(&cfg, &ds, &TrainMode::ALL, &[4, 8], &[1, 2], 0.25, |_| {}).unwrap();
    assert_eq!(table.cells.len(), 3 * 2 * 2);
    let text = table.to_string();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("N_t=4") && text.contains("N_t=8") && text.contains("±"));
    assert!(run_ablation(&cfg, &ds, &TrainMode::ALL, &[4], &[], 0.25, |_| {}).is_err());
}

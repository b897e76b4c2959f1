mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdda_core::data::synth::{generate_layout, CLASS_NAMES};
use ssdda_core::data::*;
use ssdda_core::Error;

#[test]
fn generation_is_idempotent_and_counts_exact() {
    let dir = tempfile::tempdir().unwrap();
    let counts = DatasetCounts {
        n_source: 12,
        n_target: 9,
    };
    let spec = common::small_spec();
    let first = generate_dataset(&spec, &DomainShift::default(), counts, dir.path(), 7).unwrap();
    assert_eq!(first.files_written, 2 * 21 + 1);
    let sum = first.manifest.checksum().unwrap();
    let again = generate_dataset(&spec, &DomainShift::default(), counts, dir.path(), 7).unwrap();
    assert_eq!(again.files_written, 0);
    assert_eq!(again.manifest.checksum().unwrap(), sum);
    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, first.manifest);
    assert_eq!(loaded.count(Domain::Source), 12);
    assert_eq!(loaded.count(Domain::Target), 9);
    let other = tempfile::tempdir().unwrap();
    let reseeded = generate_dataset(&spec, &DomainShift::default(), counts, other.path(), 8).unwrap();
    assert_ne!(reseeded.manifest.checksum().unwrap(), sum);
}

#[test]
fn every_class_appears_in_at_least_a_tenth_of_images() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let n = ds.samples().len();
    for class in 0..CLASS_NAMES.len() as u8 {
        let with = ds.samples().iter().filter(|s| s.labels.data().contains(&class)).count();
        assert!(with * 10 >= n, "class {class} in only {with}/{n} images");
    }
}

#[test]
fn manifest_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    common::small_dataset(dir.path());
    std::fs::remove_file(dir.path().join("images/t0003.ppm")).unwrap();
    let err = DatasetManifest::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("t0003"), "{err}");
    let bad = DatasetManifest::parse(dir.path(), "a\tsource\tx\ty\na\ttarget\tx\ty\n");
    assert!(matches!(bad, Err(Error::Format { .. })));
    assert!(DatasetManifest::parse(dir.path(), "a\tnowhere\tx\ty\n").is_err());
}

#[test]
fn externally_written_layout_loads() {
    let dir = tempfile::tempdir().unwrap();
    let img = ssdda_core::SegImage::filled(3, 2, 3, 0.2).unwrap();
    let lab = ssdda_core::LabelMap::new(3, 2, vec![0, 1, 1, 255, 4, 0]).unwrap();
    netpbm::write_ppm(&dir.path().join("images/x.ppm"), &img).unwrap();
    netpbm::write_label_pgm(&dir.path().join("labels/x.pgm"), &lab).unwrap();
    std::fs::write(dir.path().join(MANIFEST_FILE), "x\ttarget\timages/x.ppm\tlabels/x.pgm\n").unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let s = ds.get("x").unwrap();
    assert_eq!(s.labels, lab);
    assert_eq!(netpbm::encode_ppm(&s.image).unwrap(), netpbm::encode_ppm(&img).unwrap());
}

#[test]
fn split_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let m = ds.manifest();
    let none = make_splits(m, 0, 0.25, 1).unwrap();
    assert!(none.labeled.is_empty());
    assert_eq!(none.val.len(), 10);
    let all = make_splits(m, 30, 0.25, 1).unwrap();
    assert!(all.unlabeled.is_empty());
    assert!(matches!(make_splits(m, 31, 0.25, 1), Err(Error::InvalidSplit(_))));
}

#[test]
fn splits_are_nested_and_share_validation() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let small = make_splits(ds.manifest(), 4, 0.25, 9).unwrap();
    let large = make_splits(ds.manifest(), 12, 0.25, 9).unwrap();
    assert_eq!(small.val, large.val);
    assert_eq!(&large.labeled[..4], &small.labeled[..]);
}

#[test]
fn split_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 3).unwrap();
    assert!(split.write(dir.path()).unwrap());
    assert!(dir.path().join("split_8_3.txt").is_file());
    let back = SplitSpec::read(dir.path(), 8, 3).unwrap();
    assert_eq!(back, split);
    back.validate(ds.manifest()).unwrap();
    let text = std::fs::read_to_string(split.path(dir.path())).unwrap();
    assert!(text.starts_with("[labeled]\n"));
}

#[test]
fn batch_shape_and_distinct_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::small_dataset(dir.path());
    let split = make_splits(ds.manifest(), 8, 0.25, 3).unwrap();
    let sources: Vec<String> = ds.manifest().ids(Domain::Source).into_iter().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..500 {
        let b = sample_batch(&sources, &split, &mut rng).unwrap();
        assert_ne!(b.target_labeled[0], b.target_labeled[1]);
        assert_ne!(b.target_unlabeled[0], b.target_unlabeled[1]);
        assert!(split.labeled.contains(&b.target_labeled[0]));
        assert!(split.unlabeled.contains(&b.target_unlabeled[1]));
        assert!(b.source.starts_with('s'));
    }
    let tiny = SplitSpec {
        labeled: vec!["t0000".into()],
        ..split.clone()
    };
    assert!(matches!(sample_batch(&sources, &tiny, &mut rng), Err(Error::InvalidSplit(_))));
}

#[test]
fn labeled_draw_frequencies_are_uniform() {
    let split = SplitSpec {
        labeled: (0..16).map(|i| format!("l{i}")).collect(),
        unlabeled: (0..4).map(|i| format!("u{i}")).collect(),
        val: Vec::new(),
        seed: 0,
    };
    let sources = vec!["s".to_string()];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let draws = 10_000;
    let mut counts = std::collections::HashMap::new();
    for _ in 0..draws {
        for id in sample_batch(&sources, &split, &mut rng).unwrap().target_labeled {
            *counts.entry(id).or_insert(0usize) += 1;
        }
    }
    // Each batch holds two distinct ids: per-id inclusion probability is 2/16.
    let p = 2.0 / 16.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    assert_eq!(counts.len(), 16);
    for (id, c) in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{id}: {c} vs {mean} ± {sigma}");
    }
}

/// Independent recount: shape `i` is visible iff some pixel centre lies in it
/// and in no shape drawn after it.
fn visible_by_recount(layout: &synth::SceneLayout, i: usize) -> bool {
    (0..layout.height).any(|r| {
        (0..layout.width).any(|c| {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            layout.shapes[i].geometry.contains(x, y)
                && !layout.shapes[i + 1..].iter().any(|s| s.geometry.contains(x, y))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_never_changes_labels(seed in any::<u64>()) {
        let spec = SceneSpec::default();
        let shift = DomainShift::default();
        let (_, ys) = generate_scene(&spec, Domain::Source, &shift, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (_, yt) = generate_scene(&spec, Domain::Target, &shift, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(ys, yt);
    }

    #[test]
    fn every_shape_contributes_a_pixel(seed in any::<u64>()) {
        let layout = generate_layout(&SceneSpec::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let labels = layout.labels();
        for (i, s) in layout.shapes.iter().enumerate() {
            prop_assert!(visible_by_recount(&layout, i), "shape {} hidden", i);
            prop_assert!(labels.data().contains(&s.geometry.class_id()));
        }
    }

    #[test]
    fn splits_partition_target_ids(seed in any::<u64>(), n in 0usize..=30) {
        let ids: Vec<String> = (0..40).map(|i| item_id(Domain::Target, i)).collect();
        let manifest = DatasetManifest {
            root: "r".into(),
            entries: ids
                .iter()
                .map(|id| ManifestEntry { id: id.clone(), domain: Domain::Target, image: "i".into(), label: "l".into() })
                .collect(),
        };
        let split = make_splits(&manifest, n, 0.25, seed).unwrap();
        prop_assert_eq!(split.labeled.len(), n);
        split.validate(&manifest).unwrap();
        let all: HashSet<&String> = split.labeled.iter().chain(&split.unlabeled).chain(&split.val).collect();
        prop_assert_eq!(all.len(), 40);
        prop_assert_eq!(make_splits(&manifest, n, 0.25, seed).unwrap(), split);
    }
}

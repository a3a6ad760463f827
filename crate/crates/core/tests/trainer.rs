mod common;

use common::random_points;
use pointlab::dataio::{synth_dataset, Dataset, Split};
use pointlab::exec::ExecMode;
use pointlab::geometry::PointCloud;
use pointlab::models::{ModelSpec, Variant};
use pointlab::rng::seeded;
use pointlab::stimulus::{experiment1_full, full_manifest, Condition, SourceSet, OBJECTS_PER_CATEGORY};
use pointlab::trainer::*;
use rand::Rng;

fn small_spec(v: Variant, classes: usize, points: usize) -> ModelSpec {
    let mut s = ModelSpec::for_variant(v, classes).uniform_width(8);
    s.points_in = points;
    s.k_neighbors = 8;
    s
}

/// Class 0: points along a thin rod. Class 1: an isotropic blob.
fn rods_and_blobs(per_class: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let mut items = Vec::new();
    for i in 0..per_class {
        for label in 0..2 {
            let pts = (0..n)
                .map(|_| {
                    let t: f64 = rng.gen_range(-1.0..1.0);
                    if label == 0 {
                        [t, rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)]
                    } else {
                        [t * 0.5, rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]
                    }
                })
                .collect();
            items.push(PointCloud::new(pts, label, format!("toy_{label}_{i}")).unwrap());
        }
    }
    Dataset { items, split: Split::Train, category_names: vec!["rod".into(), "blob".into()] }
}

fn quick(epochs: usize, augment: bool) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, learning_rate: 1e-2, seed: 3, augment_on: augment, ..TrainConfig::default() }
}

#[test]
fn separable_toy_is_learned() {
    let ds = rods_and_blobs(32, 64, 1);
    for v in [Variant::Pt, Variant::Dgcnn] {
        let mut spec = small_spec(v, 2, 64);
        spec = spec.uniform_width(16);
        let cfg = TrainConfig { batch_size: 8, learning_rate: 3e-3, ..quick(20, false) };
        let (_, logs) = train_model(&spec, &ds, Some(&ds), &cfg, &mut std::io::sink()).unwrap();
        assert_eq!(logs.len(), 20);
        let tail: f64 = logs[17..].iter().map(|l| l.train_loss).sum::<f64>() / 3.0;
        assert!(tail < 0.5 * logs[0].train_loss, "{v}: {logs:?}");
        assert!(logs.iter().any(|l| l.test_accuracy == Some(1.0)), "{v}: {logs:?}");
    }
}

#[test]
fn memorizes_ten_random_clouds() {
    let items = (0..10).map(|i| PointCloud::new(random_points(32, 70 + i as u64), i, format!("r{i}")).unwrap()).collect();
    let ds = Dataset { items, split: Split::Train, category_names: (0..10).map(|i| format!("c{i}")).collect() };
    let cfg = TrainConfig { batch_size: 5, learning_rate: 3e-3, ..quick(80, false) };
    let spec = small_spec(Variant::Dgcnn, 10, 32).uniform_width(16);
    let (model, logs) = train_model(&spec, &ds, Some(&ds), &cfg, &mut std::io::sink()).unwrap();
    assert_eq!(dataset_accuracy(&model, &ds).unwrap(), 1.0, "{logs:?}");
}

#[test]
fn training_is_bit_reproducible() {
    let ds = rods_and_blobs(4, 24, 2);
    let spec = small_spec(Variant::Pt, 2, 24);
    let run = |seed| {
        let mut log = Vec::new();
        let cfg = TrainConfig { seed, ..quick(3, true) };
        let (m, logs) = train_model(&spec, &ds, None, &cfg, &mut log).unwrap();
        let mut w = Vec::new();
        m.save_weights(&mut w).unwrap();
        (w, logs, log)
    };
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    let lines: Vec<EpochLog> = String::from_utf8(a.2).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines, a.1);
}

#[test]
fn both_precisions_train() {
    let ds = rods_and_blobs(4, 24, 3);
    let cfg = TrainConfig { precision: Precision::F64, ..quick(2, false) };
    let (m, _) = train_model(&small_spec(Variant::Dgcnn, 2, 24), &ds, None, &cfg, &mut std::io::sink()).unwrap();
    assert!(matches!(m, TrainedModel::F64(_)));
}

#[test]
fn invalid_configs_rejected() {
    let ds = rods_and_blobs(2, 24, 4);
    let spec = small_spec(Variant::Pt, 2, 24);
    for cfg in [quick(0, false), TrainConfig { batch_size: 0, ..quick(1, false) }, TrainConfig { learning_rate: -1.0, ..quick(1, false) }] {
        let r = train_model(&spec, &ds, None, &cfg, &mut std::io::sink());
        assert!(matches!(r, Err(TrainError::InvalidConfig(_))));
    }
    let empty = Dataset { items: vec![], ..ds };
    assert!(matches!(train_model(&spec, &empty, None, &quick(1, false), &mut std::io::sink()), Err(TrainError::EmptyDataset)));
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax([f64::NEG_INFINITY, -1.0]), 1);
}

#[test]
fn normal_interval_is_clipped() {
    assert_eq!(normal_interval(70, 70), (1.0, 1.0));
    assert_eq!(normal_interval(0, 70), (0.0, 0.0));
    let (lo, hi) = normal_interval(35, 70);
    assert!((hi - lo - 2.0 * 1.96 * (0.25f64 / 70.0).sqrt()).abs() < 1e-12);
}

fn exp1_setup() -> (Dataset, pointlab::stimulus::StimulusManifest) {
    let (_, test) = synth_dataset(1, OBJECTS_PER_CATEGORY, 64, 9, ExecMode::auto()).unwrap();
    let src = SourceSet::from_dataset(&test, Some(OBJECTS_PER_CATEGORY));
    let m = experiment1_full(&src, false, 11).unwrap();
    (test, m)
}

#[test]
fn oracle_and_constant_classifiers() {
    let (test, m) = exp1_setup();
    let subset: Vec<usize> = (0..10).collect();
    let rep = evaluate_conditions("oracle", &LabelOracle { num_classes: 10 }, &m, &[&test], &subset).unwrap();
    assert_eq!(rep.rows.len(), 7);
    assert_eq!(rep.predictions.len(), 490);
    for r in &rep.rows {
        assert_eq!((r.correct, r.total, r.accuracy), (70, 70, 1.0));
    }
    assert_eq!(rep.recount(), rep.rows);

    let mut l = vec![0.0; 10];
    l[4] = 1.0;
    let rep = evaluate_conditions("const", &ConstantLogits(l), &m, &[&test], &subset).unwrap();
    for r in &rep.rows {
        assert_eq!((r.correct, r.total), (7, 70));
        assert!((r.accuracy - 0.1).abs() < 1e-12);
    }
    assert!(rep.predictions.iter().all(|p| p.predicted_category == m.categories[4]));
    let conds: Vec<Condition> = rep.rows.iter().map(|r| r.condition).collect();
    let mut sorted = conds.clone();
    sorted.sort();
    assert_eq!(conds, sorted);
}

#[test]
fn restricted_subset_maps_positions() {
    let (test, m) = exp1_setup();
    // model classes listed in reverse: position i is class 9 - i
    let subset: Vec<usize> = (0..10).rev().collect();
    let rep = evaluate_conditions("oracle", &LabelOracle { num_classes: 10 }, &m, &[&test], &subset).unwrap();
    // the oracle's label is the dataset label, which no longer lines up
    assert!(rep.rows.iter().all(|r| r.correct == 0));
    assert!(evaluate_conditions("x", &LabelOracle { num_classes: 10 }, &m, &[&test], &subset[..3]).is_err());
}

#[test]
fn missing_source_is_reported() {
    let (test, _) = exp1_setup();
    let src = SourceSet::from_dataset(&test, Some(1));
    let m = full_manifest("d", &src, &[Condition::density(0.5)], 1);
    let (_, other) = synth_dataset(1, 1, 64, 99, ExecMode::auto()).unwrap();
    let mut other = other;
    for pc in &mut other.items {
        pc.source_id = format!("{}_x", pc.source_id);
    }
    let r = evaluate_conditions("x", &LabelOracle { num_classes: 10 }, &m, &[&other], &(0..10).collect::<Vec<_>>());
    assert!(matches!(r, Err(TrainError::MissingSource(_))));
}

#[test]
fn sweep_trains_every_variant() {
    let (train, test) = synth_dataset(2, 2, 48, 12, ExecMode::auto()).unwrap();
    let src = SourceSet::from_dataset(&test, None);
    let m = full_manifest("d", &src, &[Condition::density(0.5), Condition::density(1.0)], 3);
    let variants: Vec<(String, ModelSpec)> =
        [Variant::Pt, Variant::PtNoDs].iter().map(|&v| (v.name().to_string(), small_spec(v, 10, 48))).collect();
    let out = ablation_sweep(&variants, &train, &test, &m, &quick(1, false), &(0..10).collect::<Vec<_>>()).unwrap();
    assert_eq!(out.len(), 2);
    for e in &out {
        assert_eq!(e.logs.len(), 1);
        assert_eq!(e.report.rows.iter().map(|r| r.total).sum::<usize>(), 40);
    }
    assert!(ablation_sweep(&[], &train, &test, &m, &quick(1, false), &[]).is_err());
}

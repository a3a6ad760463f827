use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pointlab::dataio::synth_dataset;
use pointlab::exec::ExecMode;
use pointlab::geometry::knn_points;
use pointlab::models::{Model, ModelSpec, Variant};
use pointlab::rng::seeded;
use pointlab::stimulus::{chamfer_distance, full_manifest, Condition, SourceSet};
use pointlab::trainer::{evaluate_conditions, ConstantLogits};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn geometry(c: &mut Criterion) {
    let (_, test) = synth_dataset(1, 2, 1024, 1, ExecMode::Sequential).unwrap();
    let a = &test.items[0].points;
    let b = &test.items[1].points;
    let mut g = c.benchmark_group("geometry");
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::new("knn-1024-k20", name), &mode, |bch, &m| {
            bch.iter(|| knn_points(black_box(a), black_box(a), 20, m).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("chamfer-1024", name), &mode, |bch, &m| {
            bch.iter(|| chamfer_distance(black_box(a), black_box(b), m).unwrap())
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let (_, test) = synth_dataset(1, 1, 256, 2, ExecMode::Sequential).unwrap();
    let pc = &test.items[0];
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    for v in [Variant::Dgcnn, Variant::Pt] {
        let spec = ModelSpec::desk(v, 10, 0.25, 256);
        for (name, mode) in MODES {
            let m = Model::<f32>::new(spec.clone(), &mut seeded(3)).unwrap().with_exec(mode);
            g.bench_function(BenchmarkId::new(v.name(), name), |bch| bch.iter(|| m.logits(black_box(pc)).unwrap()));
        }
    }
    g.finish();
}

fn stimuli(c: &mut Criterion) {
    let (_, test) = synth_dataset(1, 7, 256, 4, ExecMode::Sequential).unwrap();
    let m = full_manifest("d", &SourceSet::from_dataset(&test, None), &[Condition::density(0.5), Condition::lego(0.05)], 5);
    let subset: Vec<usize> = (0..10).collect();
    let clf = ConstantLogits(vec![0.0; 10]);
    c.bench_function("materialize-140", |bch| bch.iter(|| evaluate_conditions("c", &clf, &m, &[&test], &subset).unwrap()));
}

criterion_group!(benches, geometry, forward, stimuli);
criterion_main!(benches);

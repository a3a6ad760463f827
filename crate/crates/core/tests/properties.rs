mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use common::random_points;
use pointlab::analysis::{compare_dependent_correlations, pearson};
use pointlab::dataio::synth_dataset;
use pointlab::exec::ExecMode;
use pointlab::geometry::{dist2, invert_vertical, PointCloud};
use pointlab::rng::seeded;
use pointlab::stimulus::*;
use pointlab::trainer::normal_interval;
use proptest::prelude::*;

fn sources() -> &'static SourceSet {
    static S: OnceLock<SourceSet> = OnceLock::new();
    S.get_or_init(|| {
        let (_, test) = synth_dataset(1, OBJECTS_PER_CATEGORY, 32, 77, ExecMode::auto()).unwrap();
        SourceSet::from_dataset(&test, Some(OBJECTS_PER_CATEGORY))
    })
}

fn cloud(n: usize, seed: u64) -> PointCloud {
    PointCloud::new(random_points(n, seed), 0, "p").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn downsample_is_a_subset_of_the_rounded_size(n in 1usize..600, pi in 0usize..7, seed in any::<u64>()) {
        let p = PROPORTIONS[pi];
        let pc = cloud(n, seed);
        let want = rounded_count(n, p);
        match downsample_indices(n, p, &mut seeded(seed)) {
            Ok(idx) => {
                prop_assert_eq!(idx.len(), want);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&i| i < n));
                let d = downsample_proportion(&pc, p, &mut seeded(seed)).unwrap();
                prop_assert_eq!(d.points, pc.select(&idx).points);
            }
            Err(_) => prop_assert_eq!(want, 0),
        }
    }

    #[test]
    fn inverted_is_the_flipped_density_subset(n in 20usize..300, pi in 0usize..7, seed in any::<u64>()) {
        let pc = cloud(n, seed);
        let p = PROPORTIONS[pi];
        let d = downsample_proportion(&pc, p, &mut seeded(seed)).unwrap();
        let inv = make_inverted(&pc, p, &mut seeded(seed)).unwrap();
        prop_assert_eq!(invert_vertical(&d), inv);
    }

    #[test]
    fn inversion_is_an_involution(n in 1usize..100, up in 0usize..3, seed in any::<u64>()) {
        let pc = cloud(n, seed).with_up_axis(up).unwrap();
        prop_assert_eq!(invert_vertical(&invert_vertical(&pc)), pc);
    }

    #[test]
    fn lego_stays_within_a_voxel_diagonal(n in 1usize..300, vi in 0usize..4, seed in any::<u64>()) {
        let v = VOXEL_SIZES[vi];
        let pc = cloud(n, seed);
        let lego = lego_points(&pc, v, n, &mut seeded(seed)).unwrap();
        prop_assert_eq!(lego.len(), n);
        let h = hausdorff_distance(&pc.points, &lego, ExecMode::Sequential).unwrap();
        prop_assert!(h <= 3f64.sqrt() * v * (1.0 + 1e-12), "hausdorff {} for v {}", h, v);
        let c = chamfer_distance(&pc.points, &lego, ExecMode::Sequential).unwrap();
        prop_assert!(c <= h);
    }

    #[test]
    fn chamfer_is_a_symmetric_premetric(na in 1usize..80, nb in 1usize..80, seed in any::<u64>()) {
        let a = random_points(na, seed);
        let b = random_points(nb, seed ^ 1);
        let ab = chamfer_distance(&a, &b, ExecMode::Sequential).unwrap();
        prop_assert_eq!(ab, chamfer_distance(&b, &a, ExecMode::Parallel).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(chamfer_distance(&a, &a, ExecMode::Sequential).unwrap(), 0.0);
        // brute force directed mean
        let brute: f64 = a.iter().map(|p| b.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min).sqrt()).sum::<f64>() / na as f64;
        prop_assert!((directed_mean_distance(&a, &b, ExecMode::Sequential).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn exp1_schedule_permutes_proportions_per_category(seed in any::<u64>(), inverted in any::<bool>()) {
        let src = sources();
        let m = experiment1_schedule(src, inverted, seed, 5).unwrap();
        let full = experiment1_full(src, inverted, 5).unwrap();
        prop_assert_eq!(m.len(), 70);
        for cat in &src.categories {
            let trials: Vec<_> = m.trials.iter().filter(|t| &t.category == cat).collect();
            prop_assert_eq!(trials.len(), 7);
            let objs: BTreeSet<_> = trials.iter().map(|t| t.source_id.clone()).collect();
            let conds: BTreeSet<_> = trials.iter().map(|t| t.condition).collect();
            prop_assert_eq!((objs.len(), conds.len()), (7, 7));
        }
        prop_assert!(m.trials.iter().all(|t| full.find(&t.stimulus_id) == Some(t)));
    }

    #[test]
    fn exp2_schedule_uses_distinct_objects_and_sizes(seed in any::<u64>()) {
        let src = sources();
        let m = experiment2_schedule(src, seed, 5).unwrap();
        prop_assert_eq!(m.len(), 40);
        for cat in &src.categories {
            let trials: Vec<_> = m.trials.iter().filter(|t| &t.category == cat).collect();
            let objs: BTreeSet<_> = trials.iter().map(|t| t.source_id.clone()).collect();
            let conds: BTreeSet<_> = trials.iter().map(|t| t.condition).collect();
            prop_assert_eq!((trials.len(), objs.len(), conds.len()), (4, 4, 4));
        }
    }

    #[test]
    fn pearson_is_bounded_symmetric_and_affine_invariant(
        xs in prop::collection::vec(-10.0f64..10.0, 3..60),
        noise in prop::collection::vec(-1.0f64..1.0, 60),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let y: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.3 * x + e).collect();
        let (Ok(r), Ok(r_sym)) = (pearson(&xs, &y), pearson(&y, &xs)) else {
            return Ok(());
        };
        prop_assert!((-1.0..=1.0).contains(&r.r));
        prop_assert_eq!(r.r, r_sym.r);
        prop_assert!((0.0..=1.0).contains(&r.p));
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&xs, &ya).unwrap().r - r.r).abs() < 1e-9);
        let yn: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((pearson(&xs, &yn).unwrap().r + r.r).abs() < 1e-12);
    }

    #[test]
    fn steiger_is_antisymmetric(r1 in -0.9f64..0.9, r2 in -0.9f64..0.9, r12 in -0.9f64..0.9, n in 4usize..400) {
        prop_assume!(1.0 - r1 * r1 - r2 * r2 - r12 * r12 + 2.0 * r1 * r2 * r12 > 0.01);
        let a = compare_dependent_correlations(r1, r2, r12, n).unwrap();
        let b = compare_dependent_correlations(r2, r1, r12, n).unwrap();
        prop_assert_eq!(a.z, -b.z);
        prop_assert_eq!(a.p, b.p);
        prop_assert!((0.0..=1.0).contains(&a.p));
    }

    #[test]
    fn normal_interval_brackets_the_estimate(n in 1usize..500, k in 0usize..500) {
        let k = k % (n + 1);
        let (lo, hi) = normal_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }
}

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pw_core::barycenter::{solve_barycenter, BarycenterProblem};
use pw_core::clustering::{adjusted_rand_index, normalized_mutual_info};
use pw_core::init::{initial_plan, InitKind, InitStrategy};
use pw_core::io::{format_cloud, parse_csv, parse_ply, parse_xyz, CloudFormat};
use pw_core::linalg::random_orthogonal;
use pw_core::measure::{apply_isometry, normalize, perturb, DiscreteMeasure, PermutedIsometry, PerturbationConfig};
use pw_core::pw::{cost_decomposition, procrustes_step, pw_align, pw_exact_oracle, OrthogonalMap, PwStopRule};
use pw_core::transport::{sinkhorn, solve_emd, wasserstein2, CostMatrix, SinkhornConfig};
use pw_core::Error;

fn cloud(
    n: impl Into<proptest::sample::SizeRange> + Clone,
    d: usize,
    weighted: bool,
) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), n).prop_flat_map(move |pts| {
        let n = pts.len();
        let masses = if weighted {
            prop::collection::vec(0.2..1.2f64, n).boxed()
        } else {
            Just(vec![1.0; n]).boxed()
        };
        masses.prop_map(move |m| {
            let support = Array2::from_shape_vec((n, d), pts.iter().flatten().copied().collect()).unwrap();
            normalize(&DiscreteMeasure::from_masses(support, Array1::from(m)).unwrap()).unwrap()
        })
    })
}

fn pair(
    n: std::ops::RangeInclusive<usize>,
    weighted: bool,
) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    (2usize..=3).prop_flat_map(move |d| (cloud(n.clone(), d, weighted), cloud(n.clone(), d, weighted)))
}

fn pairwise(m: &DiscreteMeasure) -> Array2<f64> {
    let x = m.support();
    Array2::from_shape_fn((m.len(), m.len()), |(i, j)| {
        (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_is_idempotent(m in (2usize..=4).prop_flat_map(|d| cloud(3..20, d, true))) {
        let again = normalize(&m).unwrap();
        let gap = (&again.support() - &m.support()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        prop_assert!(gap <= 1e-9, "{gap:e}");
    }

    #[test]
    fn isometries_preserve_distances(m in cloud(2..15, 3, true), seed in any::<u64>()) {
        let moved = apply_isometry(&m, &PermutedIsometry::random(m.len(), 3, true, seed)).unwrap();
        let (before, after) = (pairwise(&m), pairwise(&moved));
        let sorted = |a: Array2<f64>| { let mut v = a.into_raw_vec_and_offset().0; v.sort_by(f64::total_cmp); v };
        for (x, y) in sorted(before).iter().zip(sorted(after)) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn emd_is_feasible_and_strongly_dual((a, b) in pair(2..=30, true)) {
        let cost = CostMatrix::squared_euclidean(a.support(), b.support()).unwrap();
        let sol = solve_emd(&cost, a.weights(), b.weights()).unwrap();
        prop_assert!(sol.plan.marginal_defect() <= 1e-9);
        prop_assert!((sol.duals.objective(a.weights(), b.weights()) - sol.cost).abs() <= 1e-7);
        prop_assert!(sol.duals.max_violation(&cost) <= 1e-7);
    }

    #[test]
    fn wasserstein_is_a_metric((x, y, z) in (2usize..=3).prop_flat_map(|d| (cloud(2..=10, d, true), cloud(2..=10, d, true), cloud(2..=10, d, true)))) {
        let xy = wasserstein2(&x, &y).unwrap();
        prop_assert!((xy - wasserstein2(&y, &x).unwrap()).abs() <= 1e-7);
        prop_assert!(xy <= wasserstein2(&x, &z).unwrap() + wasserstein2(&z, &y).unwrap() + 1e-7);
    }

    #[test]
    fn sinkhorn_commutes_with_transposition((a, b) in pair(2..=15, true), eps in 0.05..1.0f64) {
        let cost = CostMatrix::squared_euclidean(a.support(), b.support()).unwrap();
        let cfg = SinkhornConfig::new(eps);
        let ab = sinkhorn(&cost, a.weights(), b.weights(), &cfg).unwrap();
        let ba = sinkhorn(&cost.transpose(), b.weights(), a.weights(), &cfg).unwrap();
        let gap = (ab.plan.coupling() - &ba.plan.coupling().t()).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        prop_assert!(gap <= 1e-9, "{gap:e}");
    }

    #[test]
    fn procrustes_step_beats_random_maps((a, b) in pair(2..=12, true), seed in any::<u64>()) {
        let plan = solve_emd(&CostMatrix::squared_euclidean(a.support(), b.support()).unwrap(), a.weights(), b.weights()).unwrap().plan;
        let best = procrustes_step(&a, &b, &plan).unwrap();
        let (_, corr) = cost_decomposition(&a, &b, &best, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let q = OrthogonalMap::new(random_orthogonal(a.dim(), &mut rng)).unwrap();
            let (_, other) = cost_decomposition(&a, &b, &q, &plan).unwrap();
            prop_assert!(corr >= other - 1e-9);
        }
    }

    #[test]
    fn alternation_from_any_plan_is_monotone((a, b) in pair(3..=20, true), t in 0.0..1.0f64) {
        let product = pw_core::transport::TransportPlan::product(a.weights(), b.weights());
        let vertex = solve_emd(&CostMatrix::squared_euclidean(a.support(), b.support()).unwrap(), a.weights(), b.weights()).unwrap().plan;
        let mix = pw_core::transport::TransportPlan::new(product.coupling() * t + vertex.coupling() * (1.0 - t), a.weights(), b.weights()).unwrap();
        let sol = pw_align(&a, &b, &mix, &PwStopRule::default()).unwrap();
        prop_assert!(sol.max_trace_increase() <= 1e-9);
        prop_assert!((sol.distance * sol.distance - sol.cost).abs() <= 1e-12);
        prop_assert!(pw_core::linalg::orthogonality_defect(sol.map.matrix()) <= 1e-9);
    }

    #[test]
    fn initializers_return_feasible_plans((a, b) in pair(6..=20, true), k in 2usize..=6) {
        for kind in InitKind::ALL {
            match initial_plan(&a, &b, &InitStrategy::new(kind).with_knn_k(k)) {
                Ok(plan) => prop_assert!(plan.marginal_defect() <= 1e-9, "{}", kind.name()),
                Err(Error::EigenMultiplicity(..) | Error::DegenerateCovariance) => {}
                Err(e) => prop_assert!(false, "{}: {e}", kind.name()),
            }
        }
    }

    #[test]
    fn fiedler_plan_ignores_rigid_motions((a, b) in pair(8..=20, false), seed in any::<u64>()) {
        let moved = apply_isometry(&b, &PermutedIsometry::new((0..b.len()).collect(), random_orthogonal(b.dim(), &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()).unwrap();
        let init = InitStrategy::fiedler_w().with_knn_k(4);
        let (Ok(p1), Ok(p2)) = (initial_plan(&a, &b, &init), initial_plan(&a, &moved, &init)) else {
            return Ok(());
        };
        let gap = (p1.coupling() - p2.coupling()).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        prop_assert!(gap <= 1e-9, "{gap:e}");
    }

    #[test]
    fn barycenter_weights_stay_on_the_simplex((a, b) in pair(4..=10, true), size in 2usize..=6) {
        let problem = BarycenterProblem::new(vec![a, b], size);
        let state = solve_barycenter(&problem, &InitStrategy::wasserstein(), &PwStopRule { rel_tol: 1e-8, max_iters: 10 }, true).unwrap();
        prop_assert!(state.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((state.weights.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(state.max_trace_increase() <= 1e-7);
    }

    #[test]
    fn agreement_scores_ignore_label_names(
        labels in prop::collection::vec((0usize..4, 0usize..4), 2..40),
        shift in 1usize..4,
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = labels.into_iter().unzip();
        let renamed: Vec<usize> = b.iter().map(|&l| (l + shift) % 4).collect();
        let ari = adjusted_rand_index(&a, &b).unwrap();
        prop_assert!((ari - adjusted_rand_index(&a, &renamed).unwrap()).abs() <= 1e-12);
        prop_assert!((ari - adjusted_rand_index(&renamed, &a).unwrap()).abs() <= 1e-12);
        let nmi = normalized_mutual_info(&a, &b).unwrap();
        prop_assert!((nmi - normalized_mutual_info(&renamed, &a).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn written_clouds_parse_back_identically(m in (1usize..=3).prop_flat_map(|d| cloud(2..12, d, true))) {
        type Parser = fn(&str, &str) -> pw_core::Result<DiscreteMeasure>;
        let checks: [(CloudFormat, Parser); 3] =
            [(CloudFormat::Xyz, parse_xyz), (CloudFormat::Csv, parse_csv), (CloudFormat::Ply, parse_ply)];
        for (format, parse) in checks {
            let back = parse(&format_cloud(&m, format).unwrap(), "mem").unwrap();
            prop_assert_eq!(back.support(), m.support());
            let gap = (&back.weights() - &m.weights()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            prop_assert!(gap <= 1e-15, "{:?} {gap:e}", format);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_value_is_symmetric_and_below_w2((a, b) in (2usize..=6).prop_flat_map(|n| (cloud(n, 2, false), cloud(n, 2, false)))) {
        let ab = pw_exact_oracle(&a, &b).unwrap();
        prop_assert!((ab.cost - pw_exact_oracle(&b, &a).unwrap().cost).abs() <= 1e-9);
        prop_assert!(ab.distance <= wasserstein2(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn exact_value_ignores_rotations((a, b) in (2usize..=6).prop_flat_map(|n| (cloud(n, 2, false), cloud(n, 2, false))), seed in any::<u64>()) {
        let moved = apply_isometry(&b, &PermutedIsometry::random(b.len(), 2, true, seed)).unwrap();
        let gap = (pw_exact_oracle(&a, &b).unwrap().cost - pw_exact_oracle(&a, &moved).unwrap().cost).abs();
        prop_assert!(gap <= 1e-9, "{gap:e}");
    }

    #[test]
    fn noiseless_perturbation_is_equivalent(m in cloud(2..=6, 2, false), seed in any::<u64>()) {
        let cfg = PerturbationConfig { rng_seed: seed, ..PerturbationConfig::default() };
        let copy = perturb(&m, &cfg).unwrap();
        prop_assert!(pw_exact_oracle(&m, &copy).unwrap().distance <= 1e-7);
    }
}

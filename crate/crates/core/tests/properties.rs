mod common;

use common::*;
use oac3::datasets::{circles, half_moon, kmeans, NearestCentroid};
use oac3::diagnostics::{delta_j, is_monotone, DeltaJMonitor};
use oac3::{
    average_class_probabilities, coassociation_similarity, sparsify, Divergence, DivergenceKind, PartitionSet,
    ProbMatrix, Solver, SolverConfig, SolverState,
};
use proptest::prelude::*;
use rand::Rng;

fn kind_strategy() -> impl Strategy<Value = DivergenceKind> {
    prop::sample::select(DivergenceKind::ALL.to_vec())
}

/// A pair of points inside the domain of `kind`.
fn points(kind: DivergenceKind, seed: u64, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    match kind {
        DivergenceKind::KLDivergence => {
            let m = random_rows(&mut r, 2, k, 0.02);
            (m.row(0).to_vec(), m.row(1).to_vec())
        }
        DivergenceKind::LogisticLoss => (
            (0..k).map(|_| r.random_range(0.02..0.98)).collect(),
            (0..k).map(|_| r.random_range(0.02..0.98)).collect(),
        ),
        DivergenceKind::SquaredLoss | DivergenceKind::SquaredEuclidean => (
            (0..k).map(|_| r.random_range(-3.0..3.0)).collect(),
            (0..k).map(|_| r.random_range(-3.0..3.0)).collect(),
        ),
        _ => (
            (0..k).map(|_| r.random_range(0.02..3.0)).collect(),
            (0..k).map(|_| r.random_range(0.02..3.0)).collect(),
        ),
    }
}

fn problem(seed: u64, n: usize, k: usize, kind: DivergenceKind) -> Solver {
    let mut r = rng(seed);
    let pi = random_rows(&mut r, n, k, 0.05);
    let s = random_similarity(&mut r, n, 0.6);
    let alpha = r.random_range(0.0..2.0);
    let lambda = r.random_range(0.05..2.0);
    Solver::new(&pi, &s, SolverConfig::new(kind, alpha, lambda)).unwrap()
}

fn random_state(seed: u64, n: usize, k: usize) -> SolverState {
    let mut r = rng(seed);
    SolverState {
        y_left: random_rows(&mut r, n, k, 0.05),
        y_right: random_rows(&mut r, n, k, 0.05),
        iteration: 0,
        objective_trace: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergence_is_nonnegative_and_vanishes_on_the_diagonal(kind in kind_strategy(), seed in any::<u64>(), k in 2usize..5) {
        let div = Divergence::new(kind);
        let (p, q) = points(kind, seed, k);
        prop_assert!(div.bregman(&p, &q).unwrap() > 0.0);
        prop_assert!(div.bregman(&p, &p).unwrap().abs() <= 1e-14);
    }

    #[test]
    fn divergence_matches_its_generator(kind in kind_strategy(), seed in any::<u64>(), k in 2usize..5) {
        let div = Divergence::new(kind);
        let (p, q) = points(kind, seed, k);
        let g = div.grad_phi(&q).unwrap();
        let direct = div.phi(&p).unwrap() - div.phi(&q).unwrap()
            - p.iter().zip(&q).zip(&g).map(|((a, b), c)| (a - b) * c).sum::<f64>();
        let d = div.bregman(&p, &q).unwrap();
        prop_assert!((d - direct).abs() <= 1e-9 * (1.0 + d.abs()), "{} vs {}", d, direct);
    }

    #[test]
    fn gradient_inverse_round_trips(kind in kind_strategy(), seed in any::<u64>(), k in 2usize..5) {
        let div = Divergence::new(kind);
        let (p, _) = points(kind, seed, k);
        let back = div.grad_phi_inv(&div.grad_phi(&p).unwrap()).unwrap();
        for (a, b) in p.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn dual_divergence_identity(kind in kind_strategy(), seed in any::<u64>(), k in 2usize..5) {
        let div = Divergence::new(kind);
        let (p, q) = points(kind, seed, k);
        let primal = div.bregman(&p, &q).unwrap();
        let dual = div.dual_bregman(&div.grad_phi(&q).unwrap(), &div.grad_phi(&p).unwrap()).unwrap();
        prop_assert!((primal - dual).abs() <= 1e-9);
    }

    #[test]
    fn coassociation_is_symmetric_and_in_range(seed in any::<u64>(), n in 2usize..12, r in 1usize..5) {
        let mut g = rng(seed);
        let columns: Vec<Vec<i64>> = (0..r).map(|_| (0..n).map(|_| g.random_range(0..3)).collect()).collect();
        let s = coassociation_similarity(&PartitionSet::new(columns).unwrap()).unwrap();
        for _ in 0..50 {
            let (i, j) = (g.random_range(0..n), g.random_range(0..n));
            prop_assert_eq!(s.get(i, j), s.get(j, i));
        }
        for &(i, j, v) in s.entries() {
            prop_assert!(i < j && v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn identical_partitions_give_binary_similarity(seed in any::<u64>(), n in 2usize..12, r in 1usize..5) {
        let mut g = rng(seed);
        let column: Vec<i64> = (0..n).map(|_| g.random_range(0..3)).collect();
        let s = coassociation_similarity(&PartitionSet::new(vec![column; r]).unwrap()).unwrap();
        for &(_, _, v) in s.entries() {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn averaging_ignores_ensemble_order(seed in any::<u64>()) {
        let mut g = rng(seed);
        let outputs: Vec<ProbMatrix> = (0..4).map(|_| random_rows(&mut g, 5, 3, 0.0)).collect();
        let mut reversed = outputs.clone();
        reversed.reverse();
        let a = average_class_probabilities(&outputs, 1e-12).unwrap();
        let b = average_class_probabilities(&reversed, 1e-12).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn sparsify_filters_by_threshold(seed in any::<u64>(), threshold in 0.0f64..=1.0) {
        let mut g = rng(seed);
        let s = random_similarity(&mut g, 10, 0.5);
        prop_assert_eq!(&sparsify(&s, 0.0).unwrap(), &s);
        let kept = sparsify(&s, threshold).unwrap();
        let expected: Vec<_> = s.entries().iter().copied().filter(|e| e.2 >= threshold).collect();
        prop_assert_eq!(kept.entries(), expected.as_slice());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_never_increases(kind in kind_strategy(), seed in any::<u64>(), n in 2usize..9, k in 2usize..5) {
        let solver = problem(seed, n, k, kind);
        let (_, state) = solver.run().unwrap();
        prop_assert!(is_monotone(&state.objective_trace, 1e-12), "{:?}", state.objective_trace);
    }

    #[test]
    fn half_steps_are_locally_optimal(kind in kind_strategy(), seed in any::<u64>(), n in 2usize..6, k in 2usize..4) {
        let solver = problem(seed, n, k, kind);
        let state = random_state(seed ^ 0x5eed, n, k);
        let cfg = solver.config();
        let div = cfg.divergence;
        let d = |p: &[f64], q: &[f64]| div.bregman(p, q).ok();
        let mut g = rng(seed.wrapping_add(7));
        for j in 0..n {
            let right_sub = |y: &[f64]| -> Option<f64> {
                let mut t = d(solver.pi().row(j), y)? + cfg.lambda * d(state.y_left.row(j), y)?;
                for &(i, s) in solver.adjacency().neighbors(j) {
                    t += cfg.alpha * s * d(state.y_left.row(i), y)?;
                }
                Some(t)
            };
            let left_sub = |y: &[f64]| -> Option<f64> {
                let mut t = cfg.lambda * d(y, state.y_right.row(j))?;
                for &(i, s) in solver.adjacency().neighbors(j) {
                    t += cfg.alpha * s * d(y, state.y_right.row(i))?;
                }
                Some(t)
            };
            let right = solver.update_right(j, &state);
            let left = solver.update_left(j, &state).unwrap();
            for (best, sub) in [(&right, &right_sub as &dyn Fn(&[f64]) -> Option<f64>), (&left, &left_sub)] {
                let base = sub(best).unwrap();
                for _ in 0..20 {
                    let mut dir: Vec<f64> = (0..k).map(|_| g.random_range(-1.0..1.0)).collect();
                    if kind.is_simplex() {
                        let mean = dir.iter().sum::<f64>() / k as f64;
                        dir.iter_mut().for_each(|v| *v -= mean);
                    }
                    let moved: Vec<f64> = best.iter().zip(&dir).map(|(a, b)| a + 1e-3 * b).collect();
                    if let Some(v) = sub(&moved) {
                        prop_assert!(v >= base - 1e-10, "{} < {}", v, base);
                    }
                }
            }
        }
    }

    #[test]
    fn three_point_property_after_left_step(kind in kind_strategy(), seed in any::<u64>(), n in 2usize..7, k in 2usize..4) {
        let solver = problem(seed, n, k, kind);
        let state = random_state(seed ^ 0xabc, n, k);
        let next_left = solver.left_sweep(&state.y_left, &state.y_right).unwrap();
        let lambda = solver.config().lambda;
        let before = solver.objective_split(&state.y_left, &state.y_right, lambda).unwrap();
        let after = solver.objective_split(&next_left, &state.y_right, lambda).unwrap();
        let bound = delta_j(&solver, &state.y_left, &next_left).unwrap();
        prop_assert!(before - after >= bound - 1e-10, "{} < {}", before - after, bound);
    }

    #[test]
    fn delta_j_monitor_is_non_increasing(kind in kind_strategy(), seed in any::<u64>(), n in 2usize..7, k in 2usize..4) {
        let solver = problem(seed, n, k, kind);
        let mut snaps = Vec::new();
        let (_, state) = solver.run_with(|s| snaps.push(s.clone())).unwrap();
        let reference = oac3::diagnostics::refine_reference(&solver, &state, 10_000).unwrap();
        let monitor = DeltaJMonitor::from_snapshots(&solver, &snaps, &reference.y_left).unwrap();
        prop_assert!(monitor.is_non_increasing(1e-10), "{:?}", monitor.values);
    }

    #[test]
    fn classifier_rows_are_distributions(seed in any::<u64>()) {
        let d = half_moon(60, 0.2, seed).unwrap();
        let train = d.subset(&[0, 1, 2, 30, 31, 32]);
        let probs = NearestCentroid::fit(&train).unwrap().predict(&d.points);
        for row in probs.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn kmeans_objective_never_increases(seed in any::<u64>(), clusters in 1usize..8) {
        let d = circles(80, 0.3, seed).unwrap();
        let result = kmeans(&d.points, clusters, seed, 3).unwrap();
        prop_assert!(result.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert_eq!(result.wcss, *result.history.last().unwrap());
    }
}

#[test]
fn empty_similarity_matches_alpha_zero() {
    let mut r = rng(41);
    let pi = random_rows(&mut r, 6, 3, 0.05);
    let s = random_similarity(&mut r, 6, 0.8);
    let emptied = sparsify(&s, 1.0).unwrap();
    assert!(emptied.is_empty() && !s.is_empty());
    for kind in DivergenceKind::ALL {
        let a = Solver::new(&pi, &emptied, SolverConfig::new(kind, 0.7, 0.5)).unwrap().run().unwrap().0;
        let b = Solver::new(&pi, &s, SolverConfig::new(kind, 0.0, 0.5)).unwrap().run().unwrap().0;
        assert_eq!(a.probabilities, b.probabilities, "{kind}");
    }
}

#[test]
fn copies_coalesce_as_lambda_grows() {
    for seed in 0..3u64 {
        let mut r = rng(900 + seed);
        let pi = random_rows(&mut r, 3, 2, 0.05);
        let s = random_similarity(&mut r, 3, 1.0);
        let mut gaps = Vec::new();
        for lambda in [0.1, 1.0, 10.0, 100.0, 1000.0] {
            let cfg = SolverConfig::new(DivergenceKind::KLDivergence, 0.3, lambda)
                .with_epsilon(1e-14)
                .with_max_iters(200_000);
            let solver = Solver::new(&pi, &s, cfg).unwrap();
            let (_, state) = solver.run().unwrap();
            gaps.push(solver.copy_gap(&state).unwrap().0);
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(*gaps.last().unwrap() <= 1e-6, "{gaps:?}");
    }
}

#[test]
fn lambda_threshold_matches_an_independent_evaluation() {
    for seed in 0..3u64 {
        let mut r = rng(700 + seed);
        let pi = random_rows(&mut r, 3, 2, 0.05);
        let s = random_similarity(&mut r, 3, 1.0);
        let alpha = 0.3;
        let y_star_rows = minimize_j0_kl(&pi, &s, alpha);
        let y_star = ProbMatrix::from_rows(&y_star_rows).unwrap();
        let cfg = SolverConfig::new(DivergenceKind::KLDivergence, alpha, 0.1)
            .with_epsilon(1e-14)
            .with_max_iters(100_000);
        let solver = Solver::new(&pi, &s, cfg).unwrap();
        let (_, state) = solver.run().unwrap();

        let n = 3;
        let mut relaxed = 0.0;
        let mut gap = 0.0;
        for i in 0..n {
            relaxed += kl2(pi.row(i), state.y_right.row(i));
            gap += kl2(state.y_left.row(i), state.y_right.row(i));
            for j in 0..n {
                if i != j {
                    relaxed += alpha * s.get(i, j) * kl2(state.y_left.row(i), state.y_right.row(j));
                }
            }
        }
        let expected = (j0_kl(&pi, &s, alpha, &y_star_rows) - relaxed) / gap;
        let threshold = solver.lambda_threshold(&state, &y_star).unwrap();
        assert!((threshold - expected).abs() <= 1e-6 * expected.abs().max(1.0), "{threshold} vs {expected}");
        assert!(threshold >= 0.1, "{threshold}");
    }
}

#[test]
fn alpha_zero_threshold_returns_lambda() {
    let mut r = rng(5);
    let pi = random_rows(&mut r, 3, 2, 0.05);
    let s = random_similarity(&mut r, 3, 1.0);
    let solver = Solver::new(&pi, &s, SolverConfig::new(DivergenceKind::KLDivergence, 0.0, 0.1)).unwrap();
    let (_, state) = solver.run().unwrap();
    assert_eq!(solver.lambda_threshold(&state, &pi).unwrap(), 0.1);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut r = rng(77);
    let pi = random_rows(&mut r, 300, 4, 0.05);
    let s = random_similarity(&mut r, 300, 0.3);
    for kind in DivergenceKind::ALL {
        let solver = Solver::new(&pi, &s, SolverConfig::new(kind, 0.01, 0.1)).unwrap();
        let pool = |t: usize| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
        let (a, sa) = pool(1).install(|| solver.run()).unwrap();
        let (b, sb) = pool(4).install(|| solver.run()).unwrap();
        assert_eq!(a, b, "{kind}");
        assert_eq!(sa, sb, "{kind}");
    }
}

#[test]
fn generators_are_deterministic() {
    assert_eq!(half_moon(200, 0.1, 4).unwrap(), half_moon(200, 0.1, 4).unwrap());
    assert_eq!(circles(200, 0.1, 4).unwrap(), circles(200, 0.1, 4).unwrap());
}

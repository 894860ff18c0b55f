use std::sync::Arc;

use proptest::prelude::*;

use g_calc::builtins::tabulated;
use g_calc::ldp::{
    capacity_estimate, exit_event, rate_i, rate_j, FlowSpec, LinearFlow, RateOptions, RateTarget, SkeletonMap,
    SkeletonPair,
};
use g_calc::model::{g_eval, SymMatrix, TimeGrid, UncertaintySet};
use g_calc::paths::{compensator_path, simulate, ControlPolicy, DriftControl, FnField, MarkovField};
use g_calc::pde::{solve_gheat, Boundary, PdeGrid};
use g_calc::varrep::{variational_lhs, variational_rhs, VarrepGrid};

fn sym2() -> impl Strategy<Value = SymMatrix> {
    proptest::collection::vec(-3.0f64..3.0, 3)
        .prop_map(|v| SymMatrix::from_dense(2, &[v[0], v[1], v[1], v[2]]).unwrap())
}

fn switching_policy(d: usize, lo: f64, hi: f64, cut: f64) -> ControlPolicy {
    let field = FnField::new(d, move |k, _t, x: &[f64], out: &mut [f64]| {
        for i in 0..d {
            out[i] = if x[i] > cut || k % (i + 2) == 0 {
                hi
            } else {
                lo
            };
        }
    });
    ControlPolicy::variance_feedback("switching", Arc::new(field) as Arc<dyn MarkovField>)
}

fn coarse_grid(set: &UncertaintySet) -> PdeGrid {
    PdeGrid::for_set(set, 0.5, 0.1, 0.0, Boundary::LinearExtrapolation).unwrap()
}

fn bump(c: f64, a: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| a * (-(x[0] - c) * (x[0] - c)).exp() + 0.1 * c * x[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn g_matches_brute_force_maximisation(a in sym2()) {
        let set = UncertaintySet::diagonal_box(2, 0.25, 1.0).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                let s0 = 0.25 + 0.75 * i as f64 / 100.0;
                let s1 = 0.25 + 0.75 * j as f64 / 100.0;
                best = best.max(0.5 * (a.get(0, 0) * s0 + a.get(1, 1) * s1));
            }
        }
        let g = g_eval(&a, &set).unwrap();
        prop_assert!((g - best).abs() <= 1e-6 * best.abs().max(1.0));
    }

    #[test]
    fn qv_increments_stay_in_the_scaled_set(seed in 0u64..1000, cut in -1.0f64..1.0) {
        let set = UncertaintySet::diagonal_box(2, 0.25, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let b = simulate(&set, &grid, &switching_policy(2, 0.25, 1.0, cut), 50, seed).unwrap();
        for p in 0..50 {
            for k in 0..20 {
                prop_assert!(set.contains_scaled(&b.qv_increment(p, k), grid.dt()));
            }
        }
    }

    #[test]
    fn compensator_increments_are_nonnegative(seed in 0u64..1000, scale in 0.1f64..20.0) {
        let set = UncertaintySet::diagonal_box(2, 0.25, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 25).unwrap();
        let b = simulate(&set, &grid, &switching_policy(2, 0.25, 1.0, 0.0), 40, seed).unwrap();
        let eta = move |p: usize, k: usize, x: &[f64]| {
            let s = ((p * 31 + k * 17) as f64 + seed as f64).sin() * scale;
            SymMatrix::from_dense(2, &[s + x[0], x[1] - s, x[1] - s, -s * x[0]]).unwrap()
        };
        let m = compensator_path(&set, &eta, &b).unwrap();
        for path in &m {
            for w in path.windows(2) {
                prop_assert!(w[1] - w[0] >= -1e-12);
            }
        }
    }

    #[test]
    fn simulation_is_independent_of_worker_count(seed in 0u64..10_000) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let pol = switching_policy(1, 0.25, 1.0, 0.2);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate(&set, &grid, &pol, 64, seed).unwrap());
        let b = four.install(|| simulate(&set, &grid, &pol, 64, seed).unwrap());
        for p in 0..64 {
            prop_assert_eq!(a.path(p), b.path(p));
        }
    }

    #[test]
    fn heat_solution_preserves_constants(c in -5.0f64..5.0) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let sol = solve_gheat(&|_| c, &set, &coarse_grid(&set), (0.0, 0.5)).unwrap();
        for v in sol.values() {
            prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn heat_solution_is_monotone(c in -2.0f64..2.0, a in 0.0f64..2.0, gap in 0.0f64..1.0) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let grid = coarse_grid(&set);
        let f = bump(c, a);
        let lower = solve_gheat(&f, &set, &grid, (0.0, 0.5)).unwrap();
        let upper = solve_gheat(&|x: &[f64]| f(x) + gap * (1.0 + x[0].sin()), &set, &grid, (0.0, 0.5)).unwrap();
        for (l, u) in lower.values().iter().zip(upper.values()) {
            prop_assert!(*l <= *u + 1e-12);
        }
    }

    #[test]
    fn heat_solution_is_subadditive(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, a1 in -2.0f64..2.0, a2 in -2.0f64..2.0) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let grid = coarse_grid(&set);
        let (f, g) = (bump(c1, a1), bump(c2, a2));
        let u = |h: &dyn Fn(&[f64]) -> f64| solve_gheat(h, &set, &grid, (0.0, 0.5)).unwrap().value_at(&[0.0]);
        let sum = u(&|x: &[f64]| f(x) + g(x));
        prop_assert!(sum <= u(&f) + u(&g) + 1e-10);
    }

    #[test]
    fn action_is_finite_exactly_inside_the_set(level in 0.0f64..1.5, slope in -3.0f64..3.0) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let pair = SkeletonPair::constant(grid, &[slope], &[level]).unwrap();
        let j = rate_j(&pair, &set);
        let inside = (0.25 - 1e-9..=1.0 + 1e-9).contains(&level);
        prop_assert_eq!(j.is_finite(), inside);
        if inside {
            prop_assert!(j >= 0.0);
        }
    }

    #[test]
    fn capacity_dominates_every_policy(seed in 0u64..1000, a in 0.3f64..1.5) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let spec = FlowSpec::new(
            "bm",
            Arc::new(LinearFlow { dim: 1, rate: 0.0, vol: 1.0, qv: 0.0 }),
            0.0,
            0.5,
        )
        .unwrap();
        let policies = vec![
            ControlPolicy::constant_variance(&[0.25]),
            ControlPolicy::constant_variance(&[0.6]),
            ControlPolicy::constant_variance(&[1.0]),
        ];
        let ev = exit_event(a);
        let cap = capacity_estimate(&ev, &spec, &set, &grid, &policies, &[0.0], 400, seed).unwrap();
        for pol in &policies {
            let single = capacity_estimate(&ev, &spec, &set, &grid, std::slice::from_ref(pol), &[0.0], 400, seed).unwrap();
            prop_assert!(cap.value >= single.value);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn zero_drift_stays_below_log_expectation(ys in proptest::collection::vec(-1.0f64..1.0, 5)) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let phi = tabulated(&[-2.0, -1.0, 0.0, 1.0, 2.0], &ys, 1.0).unwrap();
        let grid = VarrepGrid::for_functional(&phi, &set, 0.1, 10, Boundary::LinearExtrapolation).unwrap();
        let lhs = variational_lhs(&phi, &set, &grid).unwrap();
        let rhs = variational_rhs(&phi, &DriftControl::zero(1), &set, &grid, 2000, 1).unwrap();
        prop_assert!(rhs.value <= lhs + 3.0 * rhs.se + 0.01 * lhs.abs().max(1e-3));
    }

    #[test]
    fn rate_is_below_the_action_of_any_feasible_pair(
        slopes in proptest::collection::vec(-1.5f64..1.5, 2),
        levels in proptest::collection::vec(0.25f64..1.0, 2),
    ) {
        let set = UncertaintySet::scalar(0.25, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let f: Vec<Vec<f64>> = (0..10).map(|k| vec![slopes[k / 5]]).collect();
        let g: Vec<SymMatrix> = (0..10).map(|k| SymMatrix::scalar(levels[k / 5])).collect();
        let pair = SkeletonPair::new(grid.clone(), f, g).unwrap();
        let path: Vec<f64> = (0..=10).flat_map(|k| pair.f_node(k).to_vec()).collect();
        let opts = RateOptions { starts: 2, ..RateOptions::default() };
        let r = rate_i(&RateTarget::Path(path), &SkeletonMap::Integral, &set, &grid, &opts).unwrap();
        let j = rate_j(&pair, &set);
        prop_assert!(r.value <= j * (1.0 + 1e-3) + 1e-6, "rate {} vs action {}", r.value, j);
    }
}

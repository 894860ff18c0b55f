//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dp_value, rel_err};
use g_calc::builtins::{Builtins, FlowParams, FunctionalParams};
use g_calc::config::ExperimentConfig;
use g_calc::experiments::ExperimentRegistry;
use g_calc::ldp::{
    euler_convergence, flow_regularity, rate_i, rate_j, sample_pairs, RateOptions, RateTarget,
    SkeletonMap, SkeletonPair,
};
use g_calc::model::{SymMatrix, TimeGrid, UncertaintySet};
use g_calc::output::Report;
use g_calc::paths::{
    compensator_path, girsanov_density, simulate, ControlPolicy, DriftControl, FnField, MarkovField,
};
use g_calc::pde::{cylinder_expectation, Boundary, PdeGrid};
use g_calc::stats::Estimate;

const LO: f64 = 0.25;
const HI: f64 = 1.0;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn all(parts: Vec<Outcome>) -> Self {
        Self {
            passed: parts.iter().all(|p| p.passed),
            detail: parts
                .into_iter()
                .map(|p| p.detail)
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

fn run_experiment(json: &str) -> Report {
    let builtins = Builtins::default();
    let registry = ExperimentRegistry::default();
    let cfg = ExperimentConfig::from_json(json).expect("config parses");
    registry
        .validate(&cfg, &builtins)
        .expect("config validates");
    registry.run(&cfg, &builtins).expect("experiment runs")
}

fn result(rep: &Report, key: &str) -> f64 {
    rep.results[key]
        .as_f64()
        .unwrap_or_else(|| panic!("result {key} missing"))
}

fn check(rep: &Report, name: &str) -> Outcome {
    let c = rep
        .checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("check {name} missing"));
    Outcome::new(c.passed, format!("{name}: {}", c.detail))
}

fn scalar_set() -> UncertaintySet {
    UncertaintySet::scalar(LO, HI).unwrap()
}

fn g_normal_moments() -> Outcome {
    let set = scalar_set();
    let builtins = Builtins::default();
    let params = FunctionalParams {
        horizon: 1.0,
        dim: 1,
        cap: 4.0,
    };
    let grid = PdeGrid::for_set(&set, 1.0, 0.02, 0.0, Boundary::LinearExtrapolation).unwrap();
    let mut parts = Vec::new();
    for (name, expected, rel, abs) in [
        ("x2", 1.0, 0.005, 0.0),
        ("neg_x2", -0.25, 0.005, 0.0),
        ("x", 0.0, 0.0, 1e-6),
    ] {
        let phi = builtins
            .functionals
            .get(name)
            .unwrap()
            .build(&params)
            .unwrap();
        let start = Instant::now();
        let v = cylinder_expectation(&phi, &set, &grid).unwrap();
        let took = start.elapsed();
        let ok =
            (v - expected).abs() <= rel * expected.abs() + abs && took < Duration::from_secs(5);
        parts.push(Outcome::new(
            ok,
            format!("{name}: {v:.6} vs {expected} in {took:.2?}"),
        ));
    }
    Outcome::all(parts)
}

fn representation_sandwich() -> Outcome {
    let rep = run_experiment(
        r#"{
          "schema_version": 1,
          "experiment": "gexp",
          "seed": 11,
          "uncertainty": { "sigma_lo2": 0.25, "sigma_hi2": 1.0 },
          "grid": { "horizon": 1.0, "steps": 100, "dx": 0.02 },
          "functional": { "builtin": "abs" },
          "policies": { "levels": 5 },
          "tolerances": { "scheme_rel": 0.005, "sandwich_rel": 0.02 },
          "gexp": { "n_paths": 100000 }
        }"#,
    );
    let value = result(&rep, "value");
    let dp = dp_value(&|x: f64| x.abs(), LO, HI, 1.0, 50, 6.0, 0.005, 5);
    let dp_err = rel_err(value, dp);
    Outcome::all(vec![
        check(&rep, "closed_form"),
        check(&rep, "policies_below_value"),
        check(&rep, "best_policy_reaches_value"),
        Outcome::new(
            dp_err <= 0.005,
            format!("dp oracle {dp:.6}: rel err {dp_err:.2e}"),
        ),
    ])
}

fn duality() -> Outcome {
    let start = Instant::now();
    let rep = run_experiment(
        r#"{
          "schema_version": 1,
          "experiment": "varrep",
          "seed": 42,
          "uncertainty": { "sigma_lo2": 0.25, "sigma_hi2": 1.0 },
          "grid": { "horizon": 1.0, "steps": 50, "dx": 0.05 },
          "functional": { "builtin": "min_x2", "cap": 4.0 },
          "tolerances": { "scheme_rel": 0.01, "se_multiplier": 3.0, "gap_rel": 0.05 },
          "varrep": { "n_paths_star": 20000, "n_paths_samples": 2000, "random_controls": 100, "control_bound": 2.0, "refine": true }
        }"#,
    );
    let took = start.elapsed();
    let lhs = result(&rep, "lhs");
    let dp = dp_value(
        &|x: f64| (x * x).min(4.0).exp(),
        LO,
        HI,
        1.0,
        200,
        8.0,
        0.01,
        17,
    )
    .ln();
    let dp_err = rel_err(lhs, dp);
    Outcome::all(vec![
        check(&rep, "weak_duality"),
        check(&rep, "strong_duality"),
        check(&rep, "gap_shrinks"),
        Outcome::new(dp_err <= 0.01, format!("lhs {lhs:.5} vs dp oracle {dp:.5}")),
        Outcome::new(
            took < Duration::from_secs(60),
            format!("runtime {took:.2?}"),
        ),
    ])
}

fn random_step_policy(d: usize, steps: usize, seed: u64) -> ControlPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..2 * d).map(|_| rng.random_range(LO..=HI)).collect())
        .collect();
    let field = FnField::new(d, move |k, _t, x: &[f64], out: &mut [f64]| {
        for i in 0..d {
            out[i] = table[k][if x[i] > 0.0 { i } else { d + i }];
        }
    });
    ControlPolicy::variance_feedback(
        format!("random_step_{seed}"),
        Arc::new(field) as Arc<dyn MarkovField>,
    )
}

fn compensator_nonnegative() -> Outcome {
    let set = UncertaintySet::diagonal_box(2, LO, HI).unwrap();
    let steps = 50;
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let mut worst = f64::INFINITY;
    let mut paths = 0;
    for trial in 0..4u64 {
        let b = simulate(
            &set,
            &grid,
            &random_step_policy(2, steps, trial),
            2500,
            100 + trial,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let scale = 10f64.powf(rng.random_range(-1.0..2.0));
        let table: Vec<[f64; 3]> = (0..steps)
            .map(|_| std::array::from_fn(|_| rng.random_range(-scale..scale)))
            .collect();
        let eta = move |p: usize, k: usize, x: &[f64]| {
            let [a, c, e] = table[k];
            let s = if x[0] * x[1] > 0.0 { 1.0 } else { -1.0 } * (1.0 + (p % 7) as f64 / 7.0);
            SymMatrix::from_dense(2, &[a * s, c, c, e - a * s]).unwrap()
        };
        let m = compensator_path(&set, &eta, &b).unwrap();
        paths += m.len();
        for path in &m {
            for w in path.windows(2) {
                worst = worst.min(w[1] - w[0]);
            }
        }
    }
    Outcome::new(
        paths >= 10_000 && worst >= -1e-12,
        format!("smallest increment {worst:.3e} over {paths} paths"),
    )
}

fn girsanov_normalisation() -> Outcome {
    let set = scalar_set();
    let steps = 50;
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let step_drift: Vec<Vec<f64>> = (0..steps)
        .map(|k| vec![if k < steps / 2 { 1.2 } else { -0.7 }])
        .collect();
    let clamp = FnField::new(1, |_k, _t, x: &[f64], out: &mut [f64]| {
        out[0] = 1.5 * x[0].clamp(-1.0, 1.0)
    });
    let drifts = [
        DriftControl::constant(vec![0.8]),
        DriftControl::deterministic("step", step_drift, 1.2).unwrap(),
        DriftControl::feedback("clamped", Arc::new(clamp) as Arc<dyn MarkovField>, 1.5).unwrap(),
    ];
    let mut parts = Vec::new();
    for (i, theta2) in [LO, HI].into_iter().enumerate() {
        let b = simulate(
            &set,
            &grid,
            &ControlPolicy::constant_variance(&[theta2]),
            100_000,
            7 + i as u64,
        )
        .unwrap();
        for eta in &drifts {
            let est = Estimate::from_samples(&girsanov_density(eta, &b).unwrap());
            parts.push(Outcome::new(
                (est.mean - 1.0).abs() <= 3.0 * est.se,
                format!(
                    "{} at {theta2}: {:.5} (se {:.1e})",
                    eta.name(),
                    est.mean,
                    est.se
                ),
            ));
        }
    }
    Outcome::all(parts)
}

fn worst_case_qv() -> Outcome {
    let rep = run_experiment(
        r#"{
          "schema_version": 1,
          "experiment": "qv",
          "seed": 5,
          "uncertainty": { "sigma_lo2": 0.25, "sigma_hi2": 1.0 },
          "grid": { "horizon": 1.0, "steps": 50 },
          "tolerances": { "optimizer_grad": 1e-6 },
          "qv": { "functional": "arctan_terminal", "n_paths": 100000, "starts": 8 }
        }"#,
    );
    let reference = HI.atan();
    let (mc, det) = (result(&rep, "mc_sup"), result(&rep, "det_sup"));
    Outcome::all(vec![
        Outcome::new(
            rel_err(mc, reference) <= 0.01,
            format!("mc {mc:.6} vs {reference:.6}"),
        ),
        Outcome::new(
            (det - reference).abs() <= 1e-6,
            format!("det {det:.9} vs {reference:.9}"),
        ),
    ])
}

fn rate_function() -> Outcome {
    let set = scalar_set();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let target = RateTarget::linear(&grid, &[0.0], &[1.0]);
    let opts = RateOptions {
        starts: 8,
        seed: 3,
        ..RateOptions::default()
    };
    let r = rate_i(&target, &SkeletonMap::Integral, &set, &grid, &opts).unwrap();
    let closed = grid.horizon() / (2.0 * HI);
    let oracle = (0..=300)
        .map(|i| LO + (HI - LO) * i as f64 / 300.0)
        .map(|g| {
            rate_j(
                &SkeletonPair::constant(grid.clone(), &[1.0], &[g]).unwrap(),
                &set,
            )
        })
        .fold(f64::INFINITY, f64::min);
    let spread = r
        .starts
        .iter()
        .map(|s| rel_err(s.value, closed))
        .fold(0.0, f64::max);
    Outcome::all(vec![
        Outcome::new(
            rel_err(r.value, closed) <= 0.01,
            format!("rate {:.6} vs {closed}", r.value),
        ),
        Outcome::new(
            rel_err(oracle, closed) <= 0.01,
            format!("grid oracle {oracle:.6}"),
        ),
        Outcome::new(
            r.starts.len() == 8 && spread <= 0.01,
            format!("{} starts, worst rel err {spread:.2e}", r.starts.len()),
        ),
    ])
}

fn ldp_slope() -> Outcome {
    let start = Instant::now();
    let rep = run_experiment(
        r#"{
          "schema_version": 1,
          "experiment": "ldp",
          "seed": 42,
          "uncertainty": { "sigma_lo2": 0.25, "sigma_hi2": 1.0 },
          "grid": { "horizon": 1.0, "steps": 200 },
          "tolerances": { "ldp_rel": 0.15 },
          "ldp": { "flow": { "name": "identity" }, "eps": [0.2, 0.1, 0.05], "threshold": 1.0, "n_paths": 1000000 }
        }"#,
    );
    let took = start.elapsed();
    let expected = -1.0 / (2.0 * HI);
    let slope = result(&rep, "slope");
    Outcome::all(vec![
        Outcome::new(
            rel_err(slope, expected) <= 0.15,
            format!("slope {slope:.4} vs {expected}"),
        ),
        check(&rep, "capacity_decreases_with_eps"),
        Outcome::new(
            took < Duration::from_secs(600),
            format!("runtime {took:.2?}"),
        ),
    ])
}

fn euler_skeleton() -> Outcome {
    let set = scalar_set();
    let spec = Builtins::default()
        .flows
        .get("sine")
        .unwrap()
        .build(&FlowParams {
            eps: 1.0,
            ..FlowParams::default()
        })
        .unwrap();
    let grid = TimeGrid::new(1.0, 4096).unwrap();
    let pairs = sample_pairs(&set, &grid, 12, 16, 2.0, 17).unwrap();
    let norms_ok = pairs.iter().all(|p| p.h_norm2().sqrt() <= 2.0 + 1e-9);
    let x0s: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|x| vec![*x])
        .collect();
    let errs = euler_convergence(&spec, &pairs, &x0s, &[64, 256, 1024]).unwrap();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0].1 / w[1].1).collect();
    Outcome::new(
        norms_ok && ratios.iter().all(|r| *r >= 1.8),
        format!(
            "errors {:?}, ratios {:?}",
            errs.iter()
                .map(|e| format!("{:.3e}", e.1))
                .collect::<Vec<_>>(),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
        ),
    )
}

fn flow_regularity_bound() -> Outcome {
    let set = scalar_set();
    let spec = Builtins::default()
        .flows
        .get("sine")
        .unwrap()
        .build(&FlowParams {
            eps: 1.0,
            ..FlowParams::default()
        })
        .unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let policies: Vec<ControlPolicy> = [LO, 0.625, HI]
        .iter()
        .map(|v| ControlPolicy::constant_variance(&[*v]))
        .collect();
    // Lipschitz constants of b, sigma and h for the sine flow.
    let (lb, ls, lh) = (1.0, 0.5, 0.25);
    let gronwall = ((2.0 * lb + 2.0 * lh * HI + ls * ls * HI) * grid.horizon()).exp();
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (x, y) in [(0.0, 0.1), (-1.0, 1.0), (0.5, 0.7), (2.0, -2.0)] {
        let dist2 = (x - y) * (x - y);
        let a = flow_regularity(&spec, &set, &grid, &policies, &[x], &[y], 10_000, 23).unwrap();
        let b = flow_regularity(&spec, &set, &grid, &policies, &[x], &[y], 20_000, 23).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            let allowed = 0.1 * ra.constant + 3.0 * (ra.se + rb.se) / dist2;
            let change = (rb.constant - ra.constant).abs();
            let ok = ra.constant.is_finite() && rb.constant <= gronwall && change <= allowed;
            worst = worst.max(rb.constant);
            if !ok {
                parts.push(Outcome::new(
                    false,
                    format!(
                        "({x}, {y}) {}: {} -> {} vs {allowed}",
                        ra.policy, ra.constant, rb.constant
                    ),
                ));
            }
        }
    }
    parts.push(Outcome::new(
        worst.is_finite() && worst <= gronwall,
        format!("largest constant {worst:.4} vs growth bound {gronwall:.3}"),
    ));
    Outcome::all(parts)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("g-normal moments", g_normal_moments),
        ("representation sandwich", representation_sandwich),
        ("duality", duality),
        ("compensator nonnegative", compensator_nonnegative),
        ("girsanov normalisation", girsanov_normalisation),
        ("worst-case quadratic variation", worst_case_qv),
        ("rate function", rate_function),
        ("ldp slope", ldp_slope),
        ("euler skeleton", euler_skeleton),
        ("flow regularity", flow_regularity_bound),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        println!(
            "criterion {id:>2} {name}: {} [{:.2?}] {}",
            if out.passed { "PASS" } else { "FAIL" },
            start.elapsed(),
            out.detail
        );
        if !out.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

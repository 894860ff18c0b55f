use super::{at_least, require, Experiment};
use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::output::{num, Report};
use crate::paths::Simulator;
use crate::pde::{cylinder_expectation, snap_times, solve_gheat, PdeGrid, DIMENSION_BUDGET};
use crate::stats::Estimate;

/// Sublinear expectation of a cylinder functional by the PDE chain, bracketed by constant
/// volatility Monte Carlo.
pub struct Gexp;

fn pde_grid(cfg: &ExperimentConfig, refined: bool) -> Result<PdeGrid> {
    let set = cfg.uncertainty_set()?;
    let g = PdeGrid::for_set(&set, cfg.grid.horizon, cfg.grid.dx, 0.0, cfg.grid.boundary)?;
    if refined {
        g.refined()
    } else {
        Ok(g)
    }
}

impl Experiment for Gexp {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Gexp
    }

    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        let phi = cfg.functional(builtins)?;
        require(
            phi.n_legs() * phi.dim() <= DIMENSION_BUDGET,
            format!(
                "{} observation times in dimension {} exceed the PDE budget {DIMENSION_BUDGET}",
                phi.n_legs(),
                phi.dim()
            ),
        )?;
        at_least("gexp.n_paths", cfg.gexp_section().n_paths, 2)?;
        pde_grid(cfg, false)?.check_cfl(&cfg.uncertainty_set()?)?;
        cfg.functional_reference(builtins)?;
        Ok(())
    }

    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        let set = cfg.uncertainty_set()?;
        let phi = cfg.functional(builtins)?;
        let sec = cfg.gexp_section();
        let tol = &cfg.tolerances;
        let mut rep = Report::new("gexp");
        rep.result("functional", phi.label())?;

        let grid = pde_grid(cfg, false)?;
        let value = cylinder_expectation(&phi, &set, &grid)?;
        rep.result("value", value)?;
        if sec.refine {
            let fine = cylinder_expectation(&phi, &set, &pde_grid(cfg, true)?)?;
            rep.result("value_refined", fine)?;
            rep.result("refinement_change", (fine - value).abs())?;
        }
        if let Some(reference) = cfg.functional_reference(builtins)? {
            let err = (value - reference).abs();
            let allowed = tol.scheme_rel * reference.abs() + 1e-6;
            rep.result("reference", reference)?;
            rep.check(
                "closed_form",
                err <= allowed,
                format!("|{value} - {reference}| = {err} vs {allowed}"),
            );
        }

        let tg = cfg.time_grid()?;
        let snapped = snap_times(&phi, tg.dt(), tg.horizon())?;
        let steps: Vec<usize> = snapped.times().iter().map(|t| tg.snap(*t).0).collect();
        let d = set.dim();
        let mut rows = Vec::new();
        let mut best: Option<(String, Estimate)> = None;
        let mut above = Vec::new();
        let slack = tol.scheme_rel * value.abs();
        for pol in cfg.constant_policies()? {
            let sim = Simulator::new(&set, &tg, &pol, None, cfg.seed)?;
            let vals = sim.map_paths(sec.n_paths, |_, s| {
                let mut xs = Vec::with_capacity(steps.len() * d);
                for &k in &steps {
                    xs.extend_from_slice(s.state(k));
                }
                snapped.eval(&xs)
            })?;
            let est = Estimate::from_samples(&vals);
            if !est.below(value, tol.se_multiplier, slack) {
                above.push(pol.name().to_string());
            }
            rows.push(vec![pol.name().to_string(), num(est.mean), num(est.se)]);
            if best.as_ref().is_none_or(|(_, b)| est.mean > b.mean) {
                best = Some((pol.name().to_string(), est));
            }
        }
        let (best_name, best_est) = best.expect("at least the corner policies");
        rep.result("best_policy", &best_name)?;
        rep.result("best_policy_mean", best_est.mean)?;
        rep.result("best_policy_se", best_est.se)?;
        rep.check(
            "policies_below_value",
            above.is_empty(),
            if above.is_empty() {
                format!(
                    "every policy mean <= {value} + {} se + {slack}",
                    tol.se_multiplier
                )
            } else {
                format!("above the PDE value: {}", above.join(", "))
            },
        );
        if sec.check_attainment {
            let gap = value - best_est.mean;
            let allowed = tol.sandwich_rel * value.abs() + tol.se_multiplier * best_est.se;
            rep.check(
                "best_policy_reaches_value",
                gap <= allowed,
                format!("{best_name}: value - mean = {gap} vs {allowed}"),
            );
        }
        rep.table("policies", &["policy", "mean", "se"], rows);

        if phi.n_legs() == 1 && d == 1 {
            let sol = solve_gheat(&|x| phi.eval(x), &set, &grid, (0.0, tg.horizon()))?;
            let half = 3.0 * (set.sigma_hi2() * tg.horizon()).sqrt();
            let axis = &sol.lattice().axes()[0];
            let rows = (0..axis.nodes())
                .map(|i| axis.coord(i))
                .filter(|x| x.abs() <= half)
                .map(|x| vec![x, sol.value_at(&[x]), phi.eval(&[x])])
                .collect();
            rep.plot("profile", &["x", "u0", "phi"], rows);
        }
        Ok(rep)
    }
}

use super::{at_least, positive, require, Experiment};
use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::output::{num, Report};
use crate::pde::DIMENSION_BUDGET;
use crate::varrep::{duality_report, random_controls, DualityTolerances, VarrepGrid};

/// Both sides of the variational formula for `log E^G(exp Phi)`.
pub struct Varrep;

const CONTROL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

impl Experiment for Varrep {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Varrep
    }

    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        let phi = cfg.functional(builtins)?;
        require(
            phi.bound().is_finite() && phi.lipschitz().is_finite(),
            format!("functional '{}' must be bounded and Lipschitz", phi.label()),
        )?;
        require(
            phi.n_legs() * phi.dim() <= DIMENSION_BUDGET,
            format!(
                "functional '{}' exceeds the PDE budget {DIMENSION_BUDGET}",
                phi.label()
            ),
        )?;
        let sec = cfg.varrep_section();
        at_least("varrep.n_paths_star", sec.n_paths_star, 2)?;
        at_least("varrep.n_paths_samples", sec.n_paths_samples, 2)?;
        positive("varrep.control_bound", sec.control_bound)?;
        let set = cfg.uncertainty_set()?;
        VarrepGrid::for_functional(&phi, &set, cfg.grid.dx, cfg.grid.steps, cfg.grid.boundary)?
            .pde
            .check_cfl(&set)
    }

    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        let set = cfg.uncertainty_set()?;
        let phi = cfg.functional(builtins)?;
        let sec = cfg.varrep_section();
        let t = &cfg.tolerances;
        let tol = DualityTolerances {
            scheme_rel: t.scheme_rel,
            se_multiplier: t.se_multiplier,
            gap_rel: t.gap_rel,
            pathwise_per_sqrt_dt: t.pathwise_per_sqrt_dt,
        };
        let grid =
            VarrepGrid::for_functional(&phi, &set, cfg.grid.dx, cfg.grid.steps, cfg.grid.boundary)?;
        let controls = random_controls(
            set.dim(),
            sec.random_controls,
            sec.control_bound,
            &grid.mc,
            cfg.seed.wrapping_add(CONTROL_SEED_OFFSET),
        )?;
        let r = duality_report(
            &phi,
            &set,
            &grid,
            &controls,
            sec.n_paths_star,
            sec.n_paths_samples,
            cfg.seed,
            &tol,
        )?;
        let mut rep = Report::new("varrep");
        rep.result("functional", phi.label())?;
        rep.result("lhs", r.lhs)?;
        rep.result("rhs_star", r.rhs_star)?;
        rep.result("rhs_star_se", r.rhs_star_se)?;
        rep.result("gap", r.gap)?;
        rep.result("relative_gap", r.gap / r.lhs.abs())?;
        rep.result("scheme_tolerance", r.scheme_tolerance)?;
        rep.result("optimal_drift_bound", r.optimal_drift_bound)?;
        rep.result("max_pathwise_excess", r.max_pathwise_excess)?;
        rep.result("pathwise_tolerance", r.pathwise_tolerance)?;
        let max_sample = r
            .rhs_samples
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        if !r.rhs_samples.is_empty() {
            rep.result("max_random_rhs", max_sample)?;
        }
        rep.check(
            "weak_duality",
            r.weak_duality,
            format!("max random rhs {max_sample} vs lhs {}", r.lhs),
        );
        rep.check(
            "strong_duality",
            r.strong_duality,
            format!("gap {} vs {} |lhs|", r.gap, t.gap_rel),
        );
        rep.check(
            "constructed_drift_dominates",
            r.star_dominates,
            format!("rhs* {} vs max random rhs {max_sample}", r.rhs_star),
        );
        rep.check(
            "pathwise_identity",
            r.pathwise_identity,
            format!(
                "max excess {} vs {}",
                r.max_pathwise_excess, r.pathwise_tolerance
            ),
        );
        if sec.refine {
            let fine = duality_report(
                &phi,
                &set,
                &grid.refined()?,
                &[],
                sec.n_paths_star,
                0,
                cfg.seed,
                &tol,
            )?;
            rep.result("lhs_refined", fine.lhs)?;
            rep.result("rhs_star_refined", fine.rhs_star)?;
            rep.result("gap_refined", fine.gap)?;
            rep.check(
                "gap_shrinks",
                fine.gap.abs() < r.gap.abs(),
                format!("|gap| {} -> {}", r.gap.abs(), fine.gap.abs()),
            );
        }
        rep.table(
            "controls",
            &["control", "rhs", "se"],
            r.rhs_samples
                .iter()
                .map(|(n, v, se)| vec![n.clone(), num(*v), num(*se)])
                .collect(),
        );
        rep.table(
            "constructed_drift",
            &["policy", "mean", "se"],
            r.rhs_star_policies
                .iter()
                .map(|p| vec![p.policy.clone(), num(p.mean), num(p.se)])
                .collect(),
        );
        rep.plot(
            "controls",
            &["index", "rhs", "lhs"],
            r.rhs_samples
                .iter()
                .enumerate()
                .map(|(i, s)| vec![i as f64, s.1, r.lhs])
                .collect(),
        );
        Ok(rep)
    }
}

use super::{at_least, positive, require, Experiment};
use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::ldp::{exit_event, ldp_slope};
use crate::output::{num, Report};

/// Capacity of the exit event `max_t |X_t - x0| >= a` across noise scales and the fitted
/// decay slope.
pub struct Ldp;

impl Experiment for Ldp {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Ldp
    }

    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        let sec = cfg.ldp_section();
        let spec = cfg.flow_spec(builtins, &sec.flow, 1.0)?;
        require(
            sec.eps.len() >= 3,
            format!(
                "insufficient points: ldp.eps needs at least 3 values, has {}",
                sec.eps.len()
            ),
        )?;
        for e in &sec.eps {
            positive("ldp.eps", *e)?;
        }
        positive("ldp.threshold", sec.threshold)?;
        at_least("ldp.n_paths", sec.n_paths, 1)?;
        require(
            sec.x0.len() == spec.state_dim(),
            format!("ldp.x0 needs {} entries", spec.state_dim()),
        )
    }

    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        let set = cfg.uncertainty_set()?;
        let grid = cfg.time_grid()?;
        let sec = cfg.ldp_section();
        let spec = cfg.flow_spec(builtins, &sec.flow, sec.eps[0])?;
        let a = sec.threshold;
        // X = x0 + sqrt(eps) B: I = a^2 / (2 hi T) along the straight exit path.
        let expected = sec.expected_slope.or_else(|| {
            (sec.flow.name == "identity" && set.dim() == 1)
                .then(|| -a * a / (2.0 * set.sigma_hi2() * grid.horizon()))
        });
        let policies = cfg.constant_policies()?;
        let event = exit_event(a);
        let r = ldp_slope(
            &sec.eps,
            &|_, s| event(s),
            &spec,
            &set,
            &grid,
            &policies,
            &sec.x0,
            sec.n_paths,
            cfg.seed,
            expected,
        )?;
        let mut rep = Report::new("ldp");
        rep.result("slope", r.slope)?;
        rep.result("intercept", r.intercept)?;
        if let (Some(e), Some(dev)) = (r.expected_slope, r.relative_deviation) {
            rep.result("expected_slope", e)?;
            rep.result("relative_deviation", dev)?;
            rep.check(
                "slope_within_tolerance",
                dev <= cfg.tolerances.ldp_rel,
                format!("slope {} vs {e}: deviation {dev}", r.slope),
            );
        }
        let mut by_eps: Vec<_> = r.points.iter().collect();
        by_eps.sort_by(|x, y| y.eps.total_cmp(&x.eps));
        let ordered = by_eps.windows(2).all(|w| w[1].capacity <= w[0].capacity);
        rep.check(
            "capacity_decreases_with_eps",
            ordered,
            "capacities ordered by noise scale",
        );
        rep.table(
            "capacities",
            &[
                "eps",
                "capacity",
                "se",
                "log_capacity",
                "best_policy",
                "censored",
                "used",
            ],
            r.points
                .iter()
                .map(|p| {
                    vec![
                        num(p.eps),
                        num(p.capacity),
                        num(p.se),
                        num(p.log_capacity),
                        p.best_policy.clone(),
                        p.censored.to_string(),
                        p.used.to_string(),
                    ]
                })
                .collect(),
        );
        rep.plot(
            "log_capacity",
            &["inv_eps", "log_capacity", "fit"],
            r.points
                .iter()
                .map(|p| vec![1.0 / p.eps, p.log_capacity, r.intercept + r.slope / p.eps])
                .collect(),
        );
        Ok(rep)
    }
}

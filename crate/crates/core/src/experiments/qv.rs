use super::{at_least, require, Experiment};
use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::ldp::worst_case_qv;
use crate::output::{num, Report};

/// Worst case of a functional of the quadratic variation: policy Monte Carlo against the
/// deterministic optimum over admissible paths.
pub struct Qv;

impl Experiment for Qv {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Qv
    }

    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        let sec = cfg.qv_section();
        builtins.qv.get(&sec.functional)?;
        require(sec.cap.is_finite(), "qv.cap must be finite")?;
        at_least("qv.n_paths", sec.n_paths, 2)?;
        at_least("qv.starts", sec.starts, 1)
    }

    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        let set = cfg.uncertainty_set()?;
        let grid = cfg.time_grid()?;
        let sec = cfg.qv_section();
        let tol = &cfg.tolerances;
        let builder = builtins.qv.get(&sec.functional)?;
        let upsilon = builder.build(sec.cap);
        let r = worst_case_qv(
            upsilon.as_ref(),
            &set,
            &grid,
            &cfg.constant_policies()?,
            sec.n_paths,
            cfg.seed,
            sec.starts,
            tol.optimizer_grad,
        )?;
        let mut rep = Report::new("qv");
        rep.result("functional", &sec.functional)?;
        rep.result("mc_sup", r.mc_sup)?;
        rep.result("mc_se", r.mc_se)?;
        rep.result("mc_best_policy", &r.mc_best_policy)?;
        rep.result("det_sup", r.det_sup)?;
        rep.result("det_converged", r.det_converged)?;
        let diff = (r.mc_sup - r.det_sup).abs();
        let allowed = tol.scheme_rel * r.det_sup.abs() + tol.se_multiplier * r.mc_se;
        rep.check(
            "mc_matches_deterministic",
            diff <= allowed,
            format!("|{} - {}| = {diff} vs {allowed}", r.mc_sup, r.det_sup),
        );
        if let Some(reference) = builder.reference(&set, grid.horizon(), sec.cap) {
            let err = (r.det_sup - reference).abs();
            let allowed = tol.optimizer_grad * reference.abs().max(1.0);
            rep.result("reference", reference)?;
            rep.check(
                "deterministic_matches_reference",
                err <= allowed,
                format!("|{} - {reference}| = {err} vs {allowed}", r.det_sup),
            );
        }
        rep.table(
            "policies",
            &["policy", "mean", "se"],
            r.policies
                .iter()
                .map(|(p, m, se)| vec![p.clone(), num(*m), num(*se)])
                .collect(),
        );
        rep.table(
            "det_starts",
            &["start", "value"],
            r.det_starts
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), num(*v)])
                .collect(),
        );
        let d = set.dim();
        let mut cols = vec!["t".to_string()];
        cols.extend((0..d).map(|i| format!("g_dot{i}")));
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        rep.plot(
            "det_argmax",
            &cols,
            r.det_argmax
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let mut row = vec![grid.time(k)];
                    row.extend_from_slice(g);
                    row
                })
                .collect(),
        );
        Ok(rep)
    }
}

use super::{at_least, positive, require, Experiment};
use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind, RateConfig, TargetConfig};
use crate::error::Result;
use crate::ldp::{rate_i, RateOptions, RateTarget, SkeletonMap};
use crate::model::{TimeGrid, UncertaintySet};
use crate::output::{num, Report};

/// Rate function of a target path by penalised minimisation of the action.
pub struct Rate;

fn skeleton_map(
    cfg: &ExperimentConfig,
    builtins: &Builtins,
    sec: &RateConfig,
) -> Result<SkeletonMap> {
    match &sec.flow {
        None => {
            require(sec.x0.is_none(), "rate.x0 only applies to a flow map")?;
            Ok(SkeletonMap::Integral)
        }
        Some(f) => {
            let spec = cfg.flow_spec(builtins, f, 0.0)?;
            let x0 = sec
                .x0
                .clone()
                .unwrap_or_else(|| vec![0.0; spec.state_dim()]);
            require(
                x0.len() == spec.state_dim(),
                format!("rate.x0 needs {} entries", spec.state_dim()),
            )?;
            Ok(SkeletonMap::Flow { spec, x0 })
        }
    }
}

fn target(sec: &RateConfig, grid: &TimeGrid, p: usize) -> Result<RateTarget> {
    match &sec.target {
        TargetConfig::Linear { y0, slope } => {
            require(
                y0.len() == p && slope.len() == p,
                format!("linear target needs y0 and slope of length {p}"),
            )?;
            Ok(RateTarget::linear(grid, y0, slope))
        }
        TargetConfig::Terminal { y } => {
            require(y.len() == p, format!("terminal target needs {p} entries"))?;
            Ok(RateTarget::Terminal(y.clone()))
        }
    }
}

/// `I` in closed form for the integral map: the cheapest pair uses the largest variance.
fn integral_reference(sec: &RateConfig, set: &UncertaintySet, horizon: f64) -> Option<f64> {
    let hi = set.sigma_hi2();
    match &sec.target {
        TargetConfig::Linear { y0, slope } if y0.iter().all(|v| *v == 0.0) => {
            Some(slope.iter().map(|a| a * a).sum::<f64>() * horizon / (2.0 * hi))
        }
        TargetConfig::Terminal { y } => {
            Some(y.iter().map(|a| a * a).sum::<f64>() / (2.0 * hi * horizon))
        }
        _ => None,
    }
}

impl Experiment for Rate {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Rate
    }

    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        let sec = cfg.rate_section()?;
        let map = skeleton_map(cfg, builtins, &sec)?;
        target(&sec, &cfg.time_grid()?, map.output_dim(cfg.uncertainty.dim))?;
        at_least("rate.starts", sec.starts, 1)?;
        at_least("rate.max_iter", sec.max_iter, 1)?;
        require(
            !sec.penalties.is_empty(),
            "rate.penalties must not be empty",
        )?;
        for p in &sec.penalties {
            positive("rate.penalties", *p)?;
        }
        positive("rate.feasibility_tol", sec.feasibility_tol)
    }

    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        let set = cfg.uncertainty_set()?;
        let grid = cfg.time_grid()?;
        let sec = cfg.rate_section()?;
        let map = skeleton_map(cfg, builtins, &sec)?;
        let p = map.output_dim(set.dim());
        let tgt = target(&sec, &grid, p)?;
        let opts = RateOptions {
            starts: sec.starts,
            penalties: sec.penalties.clone(),
            max_iter: sec.max_iter,
            grad_tol: cfg.tolerances.optimizer_grad,
            feasibility_tol: sec.feasibility_tol,
            seed: cfg.seed,
        };
        let res = rate_i(&tgt, &map, &set, &grid, &opts)?;
        let tol = cfg.tolerances.scheme_rel;
        let mut rep = Report::new("rate");
        rep.result(
            "map",
            if sec.flow.is_some() {
                "flow"
            } else {
                "integral"
            },
        )?;
        rep.result("value", res.value)?;
        rep.result("residual", res.residual)?;
        rep.result("iterations", res.iterations)?;
        rep.result("converged", res.converged)?;
        rep.result("grad_norm", res.grad_norm)?;
        rep.check(
            "feasible",
            res.residual <= sec.feasibility_tol,
            format!("residual {} vs {}", res.residual, sec.feasibility_tol),
        );
        if matches!(map, SkeletonMap::Integral) {
            if let Some(reference) = integral_reference(&sec, &set, grid.horizon()) {
                let err = (res.value - reference).abs();
                rep.result("reference", reference)?;
                rep.check(
                    "closed_form",
                    err <= tol * reference.abs() + 1e-9,
                    format!("|{} - {reference}| = {err}", res.value),
                );
            }
        }
        let feasible: Vec<f64> = res
            .starts
            .iter()
            .filter(|s| s.residual <= sec.feasibility_tol)
            .map(|s| s.value)
            .collect();
        let spread = feasible.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
            - feasible.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        rep.result("feasible_starts", feasible.len())?;
        rep.check(
            "starts_agree",
            !feasible.is_empty() && spread <= tol * res.value.abs() + 1e-9,
            format!("{} feasible starts, spread {spread}", feasible.len()),
        );
        rep.table(
            "starts",
            &[
                "start",
                "value",
                "objective",
                "residual",
                "iterations",
                "grad_norm",
                "converged",
            ],
            res.starts
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    vec![
                        i.to_string(),
                        num(s.value),
                        num(s.objective),
                        num(s.residual),
                        s.iterations.to_string(),
                        num(s.grad_norm),
                        s.converged.to_string(),
                    ]
                })
                .collect(),
        );
        let psi = map.apply(&res.argmin)?;
        let d = set.dim();
        let mut columns = vec!["t".to_string()];
        columns.extend((0..p).map(|i| format!("psi{i}")));
        columns.extend((0..d).map(|i| format!("f{i}")));
        columns.extend((0..d).map(|i| format!("g_dot{i}")));
        let n = grid.n_steps();
        let rows = (0..=n)
            .map(|k| {
                let mut row = vec![grid.time(k)];
                row.extend_from_slice(&psi[k * p..(k + 1) * p]);
                row.extend_from_slice(res.argmin.f_node(k));
                row.extend(res.argmin.g_dot(k.min(n - 1)).diag());
                row
            })
            .collect();
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        rep.plot("argmin", &cols, rows);
        Ok(rep)
    }
}

use super::{at_least, positive, require, Experiment};
use crate::builtins::Builtins;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::ldp::{euler_convergence, flow_regularity, sample_pairs, RegularityReport};
use crate::model::TimeGrid;
use crate::output::{num, Report};

/// Euler skeleton convergence and the quadratic regularity of the flow in its initial point.
pub struct Flow;

const PAIR_BLOCKS: usize = 16;
const LIPSCHITZ_SAMPLES: usize = 2000;
const LIPSCHITZ_RADIUS: f64 = 3.0;

fn worst(reports: &[RegularityReport]) -> &RegularityReport {
    reports
        .iter()
        .max_by(|a, b| a.constant.total_cmp(&b.constant))
        .expect("at least one policy")
}

impl Experiment for Flow {
    fn kind(&self) -> ExperimentKind {
        ExperimentKind::Flow
    }

    fn validate(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<()> {
        let sec = cfg.flow_section();
        let spec = cfg.flow_spec(builtins, &sec.flow, sec.regularity.eps)?;
        let p = spec.state_dim();
        require(!sec.pieces.is_empty(), "flow.pieces must not be empty")?;
        for n in &sec.pieces {
            at_least("flow.pieces", *n, 1)?;
        }
        at_least("flow.reference_steps", sec.reference_steps, 1)?;
        at_least("flow.samples", sec.samples, 1)?;
        positive("flow.h_norm", sec.h_norm)?;
        require(!sec.x0s.is_empty(), "flow.x0s must not be empty")?;
        require(
            sec.x0s.iter().all(|x| x.len() == p),
            format!("flow.x0s entries need {p} values"),
        )?;
        let r = &sec.regularity;
        require(
            r.x.len() == p && r.y.len() == p && r.x != r.y,
            format!("flow.regularity x and y must be distinct points with {p} values"),
        )?;
        at_least("flow.regularity.n_paths", r.n_paths, 2)?;
        require(
            r.eps >= 0.0 && r.eps.is_finite(),
            "flow.regularity.eps must be >= 0",
        )
    }

    fn run(&self, cfg: &ExperimentConfig, builtins: &Builtins) -> Result<Report> {
        let set = cfg.uncertainty_set()?;
        let sec = cfg.flow_section();
        let tol = &cfg.tolerances;
        let spec = cfg.flow_spec(builtins, &sec.flow, sec.regularity.eps)?;
        let mut rep = Report::new("flow");
        rep.result("flow", &spec.name)?;

        let sampled = spec.sampled_lipschitz(LIPSCHITZ_SAMPLES, LIPSCHITZ_RADIUS, cfg.seed);
        rep.result("declared_lipschitz", spec.lipschitz)?;
        rep.result("sampled_lipschitz", sampled)?;
        rep.check(
            "lipschitz_declared",
            sampled <= spec.lipschitz * (1.0 + 1e-9),
            format!("sampled {sampled} vs declared {}", spec.lipschitz),
        );

        let pair_grid = TimeGrid::new(cfg.grid.horizon, sec.reference_steps)?;
        let pairs = sample_pairs(
            &set,
            &pair_grid,
            sec.samples,
            PAIR_BLOCKS,
            sec.h_norm,
            cfg.seed,
        )?;
        let errs = euler_convergence(&spec, &pairs, &sec.x0s, &sec.pieces)?;
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[0].1 / w[1].1).collect();
        let converges =
            errs.windows(2).all(|w| w[1].1 < w[0].1) && ratios.iter().all(|r| *r >= tol.min_ratio);
        rep.result("euler_errors", errs.iter().map(|e| e.1).collect::<Vec<_>>())?;
        rep.result("euler_ratios", &ratios)?;
        rep.check(
            "euler_converges",
            converges,
            format!("ratios {ratios:?} vs minimum {}", tol.min_ratio),
        );
        rep.table(
            "euler",
            &["pieces", "sup_error", "ratio"],
            errs.iter()
                .enumerate()
                .map(|(i, (n, e))| {
                    let ratio = if i == 0 {
                        String::new()
                    } else {
                        num(ratios[i - 1])
                    };
                    vec![n.to_string(), num(*e), ratio]
                })
                .collect(),
        );
        rep.plot(
            "euler",
            &["pieces", "sup_error"],
            errs.iter().map(|(n, e)| vec![*n as f64, *e]).collect(),
        );

        let r = &sec.regularity;
        let grid = cfg.time_grid()?;
        let policies = cfg.constant_policies()?;
        let dist2: f64 = r.x.iter().zip(&r.y).map(|(a, b)| (a - b) * (a - b)).sum();
        let single = flow_regularity(
            &spec, &set, &grid, &policies, &r.x, &r.y, r.n_paths, cfg.seed,
        )?;
        let double = flow_regularity(
            &spec,
            &set,
            &grid,
            &policies,
            &r.x,
            &r.y,
            2 * r.n_paths,
            cfg.seed,
        )?;
        let (a, b) = (worst(&single), worst(&double));
        rep.result("regularity_constant", a.constant)?;
        rep.result("regularity_constant_doubled", b.constant)?;
        rep.result("regularity_policy", &a.policy)?;
        rep.check(
            "regularity_finite",
            a.constant.is_finite() && b.constant.is_finite(),
            format!("constants {} and {}", a.constant, b.constant),
        );
        let change = (b.constant - a.constant).abs();
        let allowed = tol.regularity_rel * a.constant + tol.se_multiplier * (a.se + b.se) / dist2;
        rep.check(
            "regularity_stable",
            change <= allowed,
            format!("change {change} vs {allowed} under doubled paths"),
        );
        let mut rows = Vec::new();
        for (n, reports) in [(r.n_paths, &single), (2 * r.n_paths, &double)] {
            for x in reports {
                rows.push(vec![
                    n.to_string(),
                    x.policy.clone(),
                    num(x.mean_sq_distance),
                    num(x.se),
                    num(x.constant),
                ]);
            }
        }
        rep.table(
            "regularity",
            &["n_paths", "policy", "mean_sq_distance", "se", "constant"],
            rows,
        );
        Ok(rep)
    }
}

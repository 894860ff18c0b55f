//! Capacities as suprema of event frequencies over volatility policies, the
//! large-deviation slope fit and the worst case of functionals of `<B>`.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::flow::{gsde_map, FlowSample, FlowSpec};
use super::optimize::{minimize, OptOptions};
use crate::error::{Error, Result};
use crate::model::{SymMatrix, TimeGrid, UncertaintySet};
use crate::paths::{ControlPolicy, PathScratch, Simulator};
use crate::stats::{least_squares, Estimate};

/// Frequency of an event under one policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyFrequency {
    pub policy: String,
    pub hits: usize,
    pub frequency: f64,
    pub se: f64,
    /// Zero hits: `frequency` is the floor `1 / (2 n)`.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub value: f64,
    pub best_policy: String,
    pub censored: bool,
    pub n_paths: usize,
    pub policies: Vec<PolicyFrequency>,
}

/// Event on one flow sample.
pub type FlowEvent<'a> = dyn Fn(&FlowSample<'_>) -> bool + Sync + 'a;

/// `max_theta P_theta(event)` over `policies`, every policy driven by the same noise.
#[allow(clippy::too_many_arguments)]
pub fn capacity_estimate(
    event: &FlowEvent<'_>,
    spec: &FlowSpec,
    set: &UncertaintySet,
    grid: &TimeGrid,
    policies: &[ControlPolicy],
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<CapacityReport> {
    if policies.is_empty() {
        return Err(Error::Argument("capacity needs at least one policy".into()));
    }
    if n_paths == 0 {
        return Err(Error::Argument("capacity needs at least one path".into()));
    }
    let x0s = [x0.to_vec()];
    let mut freqs = Vec::with_capacity(policies.len());
    for pol in policies {
        let hits: usize = gsde_map(spec, set, grid, pol, &x0s, n_paths, seed, |_, s| {
            usize::from(event(s))
        })?
        .into_iter()
        .sum();
        let n = n_paths as f64;
        let (frequency, censored) = if hits == 0 {
            (0.5 / n, true)
        } else {
            (hits as f64 / n, false)
        };
        let q = hits as f64 / n;
        freqs.push(PolicyFrequency {
            policy: pol.name().to_string(),
            hits,
            frequency,
            se: (q * (1.0 - q) / n).sqrt(),
            censored,
        });
    }
    let best = freqs
        .iter()
        .enumerate()
        .fold(0, |b, (i, f)| if f.hits > freqs[b].hits { i } else { b });
    Ok(CapacityReport {
        value: freqs[best].frequency,
        best_policy: freqs[best].policy.clone(),
        censored: freqs[best].censored,
        n_paths,
        policies: freqs,
    })
}

/// `{ sup_t |X_t - x0| >= a }` for a scalar flow started at `x0` (first initial point).
pub fn exit_event(a: f64) -> impl Fn(&FlowSample<'_>) -> bool + Sync {
    move |s: &FlowSample<'_>| {
        let x0 = s.at(0, 0)[0];
        (1..=s.n_steps).any(|k| (s.at(0, k)[0] - x0).abs() >= a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopePoint {
    pub eps: f64,
    pub capacity: f64,
    pub se: f64,
    pub log_capacity: f64,
    pub best_policy: String,
    pub censored: bool,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeReport {
    pub points: Vec<SlopePoint>,
    pub slope: f64,
    pub intercept: f64,
    /// `-inf I` over the event, when supplied.
    pub expected_slope: Option<f64>,
    pub relative_deviation: Option<f64>,
}

/// Least-squares fit of `log c(eps)` against `1 / eps` for an event family indexed by the
/// noise scale. Censored points are dropped with a warning.
#[allow(clippy::too_many_arguments)]
pub fn ldp_slope(
    eps_list: &[f64],
    event: &(dyn Fn(f64, &FlowSample<'_>) -> bool + Sync),
    spec: &FlowSpec,
    set: &UncertaintySet,
    grid: &TimeGrid,
    policies: &[ControlPolicy],
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    expected_slope: Option<f64>,
) -> Result<SlopeReport> {
    if eps_list.len() < 3 {
        return Err(Error::InsufficientPoints {
            need: 3,
            have: eps_list.len(),
        });
    }
    if let Some(e) = eps_list.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Argument(format!(
            "noise scales must be positive, got {e}"
        )));
    }
    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let ev = |s: &FlowSample<'_>| event(eps, s);
        let cap = capacity_estimate(
            &ev,
            &spec.with_eps(eps),
            set,
            grid,
            policies,
            x0,
            n_paths,
            seed,
        )?;
        if cap.censored {
            warn!("eps = {eps}: no hits in {n_paths} paths, point dropped from the fit");
        }
        points.push(SlopePoint {
            eps,
            capacity: cap.value,
            se: cap
                .policies
                .iter()
                .find(|p| p.policy == cap.best_policy)
                .map_or(0.0, |p| p.se),
            log_capacity: cap.value.ln(),
            best_policy: cap.best_policy,
            censored: cap.censored,
            used: !cap.censored,
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.used)
        .map(|p| (1.0 / p.eps, p.log_capacity))
        .unzip();
    if x.len() < 2 {
        return Err(Error::InsufficientPoints {
            need: 2,
            have: x.len(),
        });
    }
    let (intercept, slope) = least_squares(&x, &y);
    Ok(SlopeReport {
        points,
        slope,
        intercept,
        expected_slope,
        relative_deviation: expected_slope.map(|e| (slope - e).abs() / e.abs()),
    })
}

/// Read-only view of a quadratic-variation path `[step 0..=n][packed]`.
pub struct QvPath<'a> {
    pub dim: usize,
    pub dt: f64,
    pub packed: &'a [f64],
}

impl QvPath<'_> {
    pub fn n_steps(&self) -> usize {
        self.packed.len() / self.packed_len() - 1
    }
    fn packed_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }
    pub fn at(&self, k: usize) -> SymMatrix {
        let m = self.packed_len();
        let mut out = SymMatrix::zeros(self.dim);
        let mut idx = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                out.set(i, j, self.packed[k * m + idx]);
                idx += 1;
            }
        }
        out
    }
    pub fn terminal(&self) -> SymMatrix {
        self.at(self.n_steps())
    }
}

/// Bounded functional of a quadratic-variation path.
pub type QvFunctional<'a> = dyn Fn(&QvPath<'_>) -> f64 + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QvReport {
    pub mc_sup: f64,
    pub mc_best_policy: String,
    pub mc_se: f64,
    pub policies: Vec<(String, f64, f64)>,
    pub det_sup: f64,
    /// Optimal piecewise-constant diagonal `g'`, `[step][axis]`.
    pub det_argmax: Vec<Vec<f64>>,
    pub det_converged: bool,
    pub det_starts: Vec<f64>,
}

/// Monte Carlo supremum over policies of `E_P[U(<B>)]` next to the deterministic supremum
/// of `U(g)` over piecewise-constant `g'` in the box.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_qv(
    upsilon: &QvFunctional<'_>,
    set: &UncertaintySet,
    grid: &TimeGrid,
    policies: &[ControlPolicy],
    n_paths: usize,
    seed: u64,
    starts: usize,
    grad_tol: f64,
) -> Result<QvReport> {
    let d = set.dim();
    let dt = grid.dt();
    let mut table = Vec::with_capacity(policies.len());
    for pol in policies {
        let sim = Simulator::new(set, grid, pol, None, seed)?;
        let vals = sim.map_paths(n_paths, |_, s: &PathScratch| {
            upsilon(&QvPath {
                dim: d,
                dt,
                packed: &s.qv,
            })
        })?;
        let est = Estimate::from_samples(&vals);
        table.push((pol.name().to_string(), est.mean, est.se));
    }
    let best = table
        .iter()
        .enumerate()
        .fold(0, |b, (i, t)| if t.1 > table[b].1 { i } else { b });

    let n = grid.n_steps();
    let m = d * (d + 1) / 2;
    let objective = |x: &[f64]| -> f64 {
        let mut packed = vec![0.0; (n + 1) * m];
        for k in 0..n {
            let mut idx = 0;
            for i in 0..d {
                for j in i..d {
                    let inc = if i == j { x[k * d + i] * dt } else { 0.0 };
                    packed[(k + 1) * m + idx] = packed[k * m + idx] + inc;
                    idx += 1;
                }
            }
        }
        -upsilon(&QvPath {
            dim: d,
            dt,
            packed: &packed,
        })
    };
    let lo = vec![set.sigma_lo2(); n * d];
    let hi = vec![set.sigma_hi2(); n * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<f64>> = (0..starts.max(1))
        .map(|s| match s {
            0 => vec![set.sigma_hi2(); n * d],
            1 => vec![set.sigma_lo2(); n * d],
            _ => (0..n * d)
                .map(|_| rng.random_range(set.sigma_lo2()..=set.sigma_hi2()))
                .collect(),
        })
        .collect();
    let opts = OptOptions {
        max_iter: 2000,
        grad_tol,
        grad_scale: 1.0 / dt,
        fd_step: 1e-7,
    };
    let outs: Vec<_> = inits
        .par_iter()
        .map(|x0| minimize(&objective, x0, &lo, &hi, &opts))
        .collect();
    let best_det = outs
        .iter()
        .min_by(|a, b| {
            a.value
                .partial_cmp(&b.value)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one start");
    Ok(QvReport {
        mc_sup: table[best].1,
        mc_best_policy: table[best].0.clone(),
        mc_se: table[best].2,
        policies: table,
        det_sup: -best_det.value,
        det_argmax: best_det.x.chunks(d).map(<[f64]>::to_vec).collect(),
        det_converged: best_det.converged,
        det_starts: outs.iter().map(|o| -o.value).collect(),
    })
}

//! Both sides of the variational formula
//! `log E^G(exp Phi) = sup_eta E^G(Phi(B^eta) - H_T^G(eta))` for cylinder functionals.
//!
//! The left side comes from the nested PDE chain with terminal data `exp(phi)`. The right
//! side is a supremum over a family of volatility policies of Monte Carlo means. The drift
//! `eta~ = grad log v_l` extracted from the chain is the maximiser.
//!
//! Right-side estimates subtract the left-point integral `int eta dB`, which has mean zero
//! under every policy, so the estimator stays unbiased while its variance drops.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{outer_square_packed, CylinderFunctional, TimeGrid, UncertaintySet};
use crate::paths::{packed_index, ControlPolicy, DriftControl, FnField, MarkovField};
use crate::pde::{leg_feedback, snap_times, Boundary, LegFeedback, PdeGrid, Terminal, ValueChain};
use crate::rng::NoiseSource;
use crate::stats::Estimate;

/// PDE lattice together with the Monte Carlo time grid.
#[derive(Debug, Clone)]
pub struct VarrepGrid {
    pub pde: PdeGrid,
    pub mc: TimeGrid,
}

impl VarrepGrid {
    /// Domain sized by the functional's Lipschitz constant (which bounds `grad log v`).
    pub fn for_functional(
        phi: &CylinderFunctional,
        set: &UncertaintySet,
        dx: f64,
        mc_steps: usize,
        boundary: Boundary,
    ) -> Result<Self> {
        let horizon = *phi.times().last().expect("non-empty times");
        let pde = PdeGrid::for_set(set, horizon, dx, phi.lipschitz(), boundary)?;
        Ok(Self {
            pde,
            mc: TimeGrid::new(horizon, mc_steps)?,
        })
    }

    /// Halves the lattice spacing, quarters the PDE step and doubles the Monte Carlo steps.
    pub fn refined(&self) -> Result<Self> {
        Ok(Self {
            pde: self.pde.refined()?,
            mc: TimeGrid::new(self.mc.horizon(), 2 * self.mc.n_steps())?,
        })
    }
}

/// `log E^G(exp Phi)` from the chain.
pub fn variational_lhs(
    phi: &CylinderFunctional,
    set: &UncertaintySet,
    grid: &VarrepGrid,
) -> Result<f64> {
    let phi = snap_times(phi, grid.mc.dt(), grid.mc.horizon())?;
    let mut chain = ValueChain::new(&phi, set, &grid.pde, Terminal::Exp, grid.mc.dt())?;
    Ok(chain.value()?.ln())
}

/// Monte Carlo mean of one volatility policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValue {
    pub policy: String,
    pub mean: f64,
    pub se: f64,
}

/// Right-side estimate: the largest policy mean and the per-policy table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhsEstimate {
    pub drift: String,
    pub value: f64,
    pub se: f64,
    pub best_policy: String,
    pub policies: Vec<PolicyValue>,
    /// Largest `Phi(B^eta) - H - int eta dB - log v_1(0, 0)` over all paths and policies.
    pub max_pathwise_excess: f64,
    pub n_paths: usize,
}

/// Which drift the simulation applies.
#[derive(Clone, Copy)]
pub enum DriftChoice<'a> {
    Given(&'a DriftControl),
    /// `eta~ = grad log v_l` from the chain.
    Optimal,
}

/// Which volatility the simulation applies.
#[derive(Clone)]
pub enum VolChoice {
    Policy(ControlPolicy),
    /// Per-node variance maximising the scheme flux of the chain.
    FluxArgmax,
}

impl VolChoice {
    fn name(&self) -> String {
        match self {
            VolChoice::Policy(p) => p.name().to_string(),
            VolChoice::FluxArgmax => "flux_argmax".into(),
        }
    }
}

/// Default policy family: every constant extreme control plus the flux-argmax feedback.
pub fn default_family(set: &UncertaintySet) -> Vec<VolChoice> {
    let mut v: Vec<VolChoice> = ControlPolicy::extreme_family(set)
        .into_iter()
        .map(VolChoice::Policy)
        .collect();
    v.push(VolChoice::FluxArgmax);
    v
}

/// Per-path outputs of one simulation.
#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    phi: f64,
    h: f64,
    stoch: f64,
}

#[derive(Clone)]
struct PathState {
    x: Vec<f64>,
    obs: Vec<f64>,
    prefix: Vec<usize>,
    h: f64,
    stoch: f64,
}

/// Chain, Monte Carlo grid and lazily built feedback tables for one functional.
pub struct Engine {
    phi: CylinderFunctional,
    set: UncertaintySet,
    mc: TimeGrid,
    chain: ValueChain,
    feedback: BTreeMap<(usize, Vec<usize>), LegFeedback>,
    lhs: f64,
}

impl Engine {
    pub fn new(phi: &CylinderFunctional, set: &UncertaintySet, grid: &VarrepGrid) -> Result<Self> {
        let phi = snap_times(phi, grid.mc.dt(), grid.mc.horizon())?;
        let mut chain = ValueChain::new(&phi, set, &grid.pde, Terminal::Exp, grid.mc.dt())?;
        let v = chain.value()?;
        if !(v > 0.0) {
            return Err(Error::Numerical(format!(
                "E^G(exp Phi) = {v} is not positive"
            )));
        }
        Ok(Self {
            phi,
            set: set.clone(),
            mc: grid.mc.clone(),
            chain,
            feedback: BTreeMap::new(),
            lhs: v.ln(),
        })
    }

    /// `log E^G(exp Phi)`.
    pub fn lhs(&self) -> f64 {
        self.lhs
    }

    /// `sup |eta~|` over every table built so far.
    pub fn optimal_bound(&self) -> f64 {
        self.feedback
            .values()
            .map(|f| f.gradient.sup_norm())
            .fold(0.0, f64::max)
    }

    fn ensure_feedback(&mut self, l: usize, prefixes: &[Vec<usize>]) -> Result<()> {
        self.chain.ensure(l, prefixes)?;
        for p in prefixes {
            let key = (l, p.clone());
            if !self.feedback.contains_key(&key) {
                let leg = self.chain.leg(l, p).expect("leg solved");
                self.feedback.insert(key, leg_feedback(leg, &self.set)?);
            }
        }
        Ok(())
    }

    fn simulate(
        &mut self,
        vol: &VolChoice,
        drift: DriftChoice<'_>,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<PathOutcome>> {
        let d = self.set.dim();
        if let DriftChoice::Given(eta) = drift {
            if eta.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: eta.dim(),
                });
            }
            if !eta.bound().is_finite() {
                return Err(Error::Argument("unbounded drift rejected".into()));
            }
        }
        let n_legs = self.phi.n_legs();
        let noise = NoiseSource::new(seed, d);
        let mut states = vec![
            PathState {
                x: vec![0.0; d],
                obs: vec![0.0; n_legs * d],
                prefix: Vec::new(),
                h: 0.0,
                stoch: 0.0,
            };
            n_paths
        ];
        let needs_chain =
            matches!(vol, VolChoice::FluxArgmax) || matches!(drift, DriftChoice::Optimal);
        let leg_steps = self.chain.leg_steps().to_vec();
        for l in 0..n_legs {
            if needs_chain {
                let mut prefixes: Vec<Vec<usize>> =
                    states.iter().map(|s| s.prefix.clone()).collect();
                prefixes.sort();
                prefixes.dedup();
                self.ensure_feedback(l, &prefixes)?;
            }
            let (k0, k1) = (leg_steps[l], leg_steps[l + 1]);
            let this = &*self;
            states
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(p, s)| this.advance(p, s, l, k0, k1, vol, drift, &noise))?;
            let lattice = self.chain.lattice();
            for s in states.iter_mut() {
                s.obs[l * d..(l + 1) * d].copy_from_slice(&s.x);
                if l + 1 < n_legs {
                    s.prefix.push(lattice.nearest(&s.x));
                }
            }
        }
        Ok(states
            .iter()
            .map(|s| PathOutcome {
                phi: self.phi.eval(&s.obs),
                h: s.h,
                stoch: s.stoch,
            })
            .collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        p: usize,
        s: &mut PathState,
        l: usize,
        k0: usize,
        k1: usize,
        vol: &VolChoice,
        drift: DriftChoice<'_>,
        noise: &NoiseSource,
    ) -> Result<()> {
        let d = self.set.dim();
        let dt = self.mc.dt();
        let sq = dt.sqrt();
        let fb = self.feedback.get(&(l, s.prefix.clone()));
        let mut stream = noise.stream(p, k0);
        let mut theta = vec![0.0; d * d];
        let mut var = vec![0.0; d];
        let mut eta = vec![0.0; d];
        let mut xi = vec![0.0; d];
        let mut cov = vec![0.0; d * (d + 1) / 2];
        for k in k0..k1 {
            let t = self.mc.time(k);
            let local = k - k0;
            match vol {
                VolChoice::Policy(pol) => pol.theta(k, t, &s.x, &mut theta),
                VolChoice::FluxArgmax => {
                    let fb = fb.expect("feedback built");
                    fb.worst_variance.eval(local, t, &s.x, &mut var);
                    theta.fill(0.0);
                    for i in 0..d {
                        theta[i * d + i] = var[i].sqrt();
                    }
                }
            }
            outer_square_packed(d, &theta, &mut cov);
            if !self.set.contains_packed(&cov, 1.0) {
                return Err(Error::ControlViolation {
                    step: k,
                    path: p,
                    detail: format!("covariance {cov:?} outside the uncertainty set"),
                });
            }
            match drift {
                DriftChoice::Given(e) => e.eval(k, t, &s.x, &mut eta),
                DriftChoice::Optimal => fb
                    .expect("feedback built")
                    .gradient
                    .eval(local, t, &s.x, &mut eta),
            }
            stream.next_step(&mut xi);
            for i in 0..d {
                let db: f64 = (0..d).map(|j| theta[i * d + j] * xi[j]).sum::<f64>() * sq;
                let shift: f64 = (0..d).map(|j| cov[packed_index(d, i, j)] * eta[j]).sum();
                s.x[i] += db + shift * dt;
                s.stoch += eta[i] * db;
                s.h += 0.5 * eta[i] * shift * dt;
            }
        }
        Ok(())
    }

    /// Right side for one drift over a policy family.
    pub fn rhs(
        &mut self,
        drift: DriftChoice<'_>,
        family: &[VolChoice],
        n_paths: usize,
        seed: u64,
    ) -> Result<RhsEstimate> {
        if family.is_empty() {
            return Err(Error::Argument("empty policy family".into()));
        }
        let mut policies = Vec::with_capacity(family.len());
        let mut excess = f64::NEG_INFINITY;
        for vol in family {
            let out = self.simulate(vol, drift, n_paths, seed)?;
            let values: Vec<f64> = out.iter().map(|o| o.phi - o.h - o.stoch).collect();
            for v in &values {
                excess = excess.max(v - self.lhs);
            }
            let est = Estimate::from_samples(&values);
            policies.push(PolicyValue {
                policy: vol.name(),
                mean: est.mean,
                se: est.se,
            });
        }
        let best =
            policies
                .iter()
                .enumerate()
                .fold(0, |b, (i, p)| if p.mean > policies[b].mean { i } else { b });
        Ok(RhsEstimate {
            drift: match drift {
                DriftChoice::Given(e) => e.name().to_string(),
                DriftChoice::Optimal => "optimal".into(),
            },
            value: policies[best].mean,
            se: policies[best].se,
            best_policy: policies[best].policy.clone(),
            policies,
            max_pathwise_excess: excess,
            n_paths,
        })
    }

    /// Plain Monte Carlo mean of `exp(Phi)` under one policy (no drift); used as a sanity
    /// bound `E_P(exp Phi) <= E^G(exp Phi)`.
    pub fn exp_mean(&mut self, vol: &VolChoice, n_paths: usize, seed: u64) -> Result<Estimate> {
        let zero = DriftControl::zero(self.set.dim());
        let out = self.simulate(vol, DriftChoice::Given(&zero), n_paths, seed)?;
        let v: Vec<f64> = out.iter().map(|o| o.phi.exp()).collect();
        Ok(Estimate::from_samples(&v))
    }
}

/// `E^G(Phi(B^eta) - H_T^G(eta))` over the default policy family.
pub fn variational_rhs(
    phi: &CylinderFunctional,
    eta: &DriftControl,
    set: &UncertaintySet,
    grid: &VarrepGrid,
    n_paths: usize,
    seed: u64,
) -> Result<RhsEstimate> {
    let mut engine = Engine::new(phi, set, grid)?;
    engine.rhs(DriftChoice::Given(eta), &default_family(set), n_paths, seed)
}

/// Random bounded drifts: half piecewise-constant in time, half smooth state feedback.
pub fn random_controls(
    dim: usize,
    count: usize,
    bound: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<DriftControl>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i % 2 == 0 {
            let blocks = rng.random_range(1..=8usize);
            let levels: Vec<Vec<f64>> = (0..blocks)
                .map(|_| random_in_ball(&mut rng, dim, bound))
                .collect();
            let n = grid.n_steps();
            let steps = (0..n).map(|k| levels[k * blocks / n].clone()).collect();
            out.push(DriftControl::deterministic(
                format!("random_open_loop_{i}"),
                steps,
                bound,
            )?);
        } else {
            let amp = random_in_ball(&mut rng, dim, bound);
            let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rate: f64 = rng.random_range(0.2..3.0);
            let tilt: f64 = rng.random_range(-1.0..1.0);
            let field = FnField::new(dim, move |_k, t, x: &[f64], out: &mut [f64]| {
                for i in 0..dim {
                    out[i] = amp[i] * (rate * (x[i] - centre[i]) + tilt * t).tanh();
                }
            });
            out.push(DriftControl::feedback(
                format!("random_feedback_{i}"),
                Arc::new(field) as Arc<dyn MarkovField>,
                bound,
            )?);
        }
    }
    Ok(out)
}

fn random_in_ball(rng: &mut ChaCha8Rng, dim: usize, bound: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 <= 1.0 {
            return v.into_iter().map(|x| x * bound).collect();
        }
    }
}

/// Tolerances used when judging the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityTolerances {
    /// Scheme tolerance relative to `|lhs|`.
    pub scheme_rel: f64,
    /// Multiplier on Monte Carlo standard errors.
    pub se_multiplier: f64,
    /// Allowed gap at the constructed drift, relative to `|lhs|`.
    pub gap_rel: f64,
    /// Allowed pathwise excess over `log v_1(0, 0)`, in units of `sqrt(dt)` of the
    /// Monte Carlo grid.
    pub pathwise_per_sqrt_dt: f64,
}

impl Default for DualityTolerances {
    fn default() -> Self {
        Self {
            scheme_rel: 0.01,
            se_multiplier: 3.0,
            gap_rel: 0.05,
            pathwise_per_sqrt_dt: 10.0,
        }
    }
}

/// Both sides of the formula with the orderings the theory predicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub lhs: f64,
    pub rhs_star: f64,
    pub rhs_star_se: f64,
    pub rhs_star_policies: Vec<PolicyValue>,
    pub rhs_samples: Vec<(String, f64, f64)>,
    pub gap: f64,
    pub mc_se: f64,
    pub scheme_tolerance: f64,
    pub optimal_drift_bound: f64,
    pub max_pathwise_excess: f64,
    pub pathwise_tolerance: f64,
    /// Every sampled rhs at most `lhs + k se + scheme tolerance`.
    pub weak_duality: bool,
    /// `|gap| <= gap_rel |lhs|`.
    pub strong_duality: bool,
    /// `rhs_star >= max(rhs_samples) - (k se + scheme tolerance)`.
    pub star_dominates: bool,
    pub pathwise_identity: bool,
    pub tolerances: DualityTolerances,
}

/// Assembles the report for `phi` against the sampled `controls`.
#[allow(clippy::too_many_arguments)]
pub fn duality_report(
    phi: &CylinderFunctional,
    set: &UncertaintySet,
    grid: &VarrepGrid,
    controls: &[DriftControl],
    n_paths_star: usize,
    n_paths_samples: usize,
    seed: u64,
    tol: &DualityTolerances,
) -> Result<DualityReport> {
    let mut engine = Engine::new(phi, set, grid)?;
    let family = default_family(set);
    let lhs = engine.lhs();
    let star = engine.rhs(DriftChoice::Optimal, &family, n_paths_star, seed)?;
    let mut samples = Vec::with_capacity(controls.len());
    for (i, c) in controls.iter().enumerate() {
        let r = engine.rhs(
            DriftChoice::Given(c),
            &family,
            n_paths_samples,
            seed.wrapping_add(1 + i as u64),
        )?;
        samples.push((c.name().to_string(), r.value, r.se));
    }
    let scheme_tolerance = tol.scheme_rel * lhs.abs();
    let pathwise_tolerance = tol.pathwise_per_sqrt_dt * grid.mc.dt().sqrt();
    let k = tol.se_multiplier;
    let weak = samples
        .iter()
        .all(|(_, v, se)| *v <= lhs + k * se + scheme_tolerance);
    let gap = lhs - star.value;
    let best_sample = samples
        .iter()
        .map(|(_, v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let best_se = samples.iter().map(|(_, _, se)| *se).fold(0.0, f64::max);
    let star_dominates = star.value >= best_sample - (k * (star.se + best_se) + scheme_tolerance);
    Ok(DualityReport {
        lhs,
        rhs_star: star.value,
        rhs_star_se: star.se,
        rhs_star_policies: star.policies.clone(),
        rhs_samples: samples,
        gap,
        mc_se: star.se,
        scheme_tolerance,
        optimal_drift_bound: engine.optimal_bound(),
        max_pathwise_excess: star.max_pathwise_excess,
        pathwise_tolerance,
        weak_duality: weak,
        strong_duality: gap.abs() <= tol.gap_rel * lhs.abs(),
        star_dominates,
        pathwise_identity: star.max_pathwise_excess <= pathwise_tolerance,
        tolerances: *tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> UncertaintySet {
        UncertaintySet::scalar(0.25, 1.0).unwrap()
    }

    fn capped_square() -> CylinderFunctional {
        CylinderFunctional::new(
            "min(x^2,4)",
            vec![1.0],
            1,
            Arc::new(|x: &[f64]| (x[0] * x[0]).min(4.0)),
            4.0,
            4.0,
        )
        .unwrap()
    }

    fn grid(phi: &CylinderFunctional) -> VarrepGrid {
        VarrepGrid::for_functional(phi, &set(), 0.05, 50, Boundary::LinearExtrapolation).unwrap()
    }

    #[test]
    fn constant_functional_has_zero_gap() {
        let phi = CylinderFunctional::new("c", vec![1.0], 1, Arc::new(|_| 0.3), 0.3, 0.0).unwrap();
        let g = grid(&phi);
        let s = set();
        let report = duality_report(&phi, &s, &g, &[], 200, 100, 1, &Default::default()).unwrap();
        assert!((report.lhs - 0.3).abs() < 1e-12);
        assert!(report.gap.abs() < 1e-12);
        assert_eq!(report.optimal_drift_bound, 0.0);
    }

    #[test]
    fn lhs_shifts_with_constants() {
        let phi = capped_square();
        let g = grid(&phi);
        let a = variational_lhs(&phi, &set(), &g).unwrap();
        let b = variational_lhs(&phi.shifted(0.7), &set(), &g).unwrap();
        assert!((b - a - 0.7).abs() < 1e-9);
    }

    #[test]
    fn zero_drift_stays_below_lhs() {
        let phi = capped_square();
        let g = grid(&phi);
        let s = set();
        let lhs = variational_lhs(&phi, &s, &g).unwrap();
        let r = variational_rhs(&phi, &DriftControl::zero(1), &s, &g, 4000, 3).unwrap();
        assert!(r.value <= lhs + 3.0 * r.se, "{} vs {lhs}", r.value);
    }

    #[test]
    fn optimal_drift_closes_the_gap() {
        let phi = capped_square();
        let g = grid(&phi);
        let s = set();
        let report = duality_report(&phi, &s, &g, &[], 4000, 100, 5, &Default::default()).unwrap();
        assert!(report.strong_duality, "{report:?}");
        assert_eq!(report.rhs_star_policies.len(), 3);
    }

    #[test]
    fn report_is_deterministic() {
        let phi = capped_square();
        let g = grid(&phi);
        let s = set();
        let controls = random_controls(1, 4, 2.0, &g.mc, 9).unwrap();
        let a = duality_report(&phi, &s, &g, &controls, 500, 300, 11, &Default::default()).unwrap();
        let b = duality_report(&phi, &s, &g, &controls, 500, 300, 11, &Default::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_controls_respect_their_bound() {
        let g = TimeGrid::new(1.0, 20).unwrap();
        let cs = random_controls(2, 10, 1.5, &g, 4).unwrap();
        let mut out = [0.0; 2];
        for c in &cs {
            for k in 0..20 {
                c.eval(k, g.time(k), &[3.0, -7.0], &mut out);
                assert!(out[0].hypot(out[1]) <= 1.5 + 1e-12);
            }
        }
    }

    #[test]
    fn unbounded_drift_is_rejected() {
        let phi = capped_square();
        let g = grid(&phi);
        let s = set();
        let field = FnField::new(1, |_, _, x: &[f64], out: &mut [f64]| out[0] = x[0]);
        assert!(DriftControl::feedback("x", Arc::new(field), f64::INFINITY).is_err());
        let eta = DriftControl::constant(vec![f64::INFINITY]);
        assert!(variational_rhs(&phi, &eta, &s, &g, 10, 1).is_err());
    }

    #[test]
    fn two_leg_chain_runs_end_to_end() {
        let phi = CylinderFunctional::new(
            "increment",
            vec![0.5, 1.0],
            1,
            Arc::new(|x: &[f64]| (x[1] - x[0]).min(1.0).powi(2).min(4.0) * 0.5),
            2.0,
            2.0,
        )
        .unwrap();
        let s = UncertaintySet::scalar(0.5, 1.0).unwrap();
        let g =
            VarrepGrid::for_functional(&phi, &s, 0.1, 20, Boundary::LinearExtrapolation).unwrap();
        let report = duality_report(&phi, &s, &g, &[], 2000, 100, 2, &Default::default()).unwrap();
        assert!(report.gap.abs() <= 0.05 * report.lhs.abs(), "{report:?}");
    }
}

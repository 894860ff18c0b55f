//! Explicit monotone finite differences for the backward G-heat equation
//! `d_t v + G(D^2 v) = 0` and the nested chain used for cylinder functionals.
//!
//! For a diagonal uncertainty set `G(D^2 v) = 1/2 sum_a (hi (v_aa)^+ - lo (v_aa)^-)`, so a
//! time step is a pointwise flux evaluation on centred second differences. The scheme is
//! monotone under `hi dt / dx_a^2 <= 1/2` per axis and `sum_a hi dt / dx_a^2 <= 1`.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Axis, Lattice};
use crate::model::{g_scalar, CylinderFunctional, UncertaintySet};
use crate::paths::FeedbackTable;

/// Edge treatment applied after every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    LinearExtrapolation,
    Clamp,
}

/// Spatial lattice, time step and boundary policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeGrid {
    lattice: Lattice,
    dt: f64,
    boundary: Boundary,
}

/// Largest CFL ratio `hi dt / dx^2` accepted per axis.
pub const CFL_PER_AXIS: f64 = 0.5;

impl PdeGrid {
    pub fn new(lattice: Lattice, dt: f64, boundary: Boundary) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!(
                "pde time step must be positive, got {dt}"
            )));
        }
        Ok(Self {
            lattice,
            dt,
            boundary,
        })
    }

    /// Symmetric cube `[-w, w]^d` with `w = 6 hi^{1/2} T^{1/2} + drift_bound hi T`, spacing
    /// `dx`, and the largest stable time step.
    pub fn for_set(
        set: &UncertaintySet,
        horizon: f64,
        dx: f64,
        drift_bound: f64,
        boundary: Boundary,
    ) -> Result<Self> {
        let hi = set.sigma_hi2();
        let half_width = 6.0 * (hi * horizon).sqrt() + drift_bound * hi * horizon;
        let axis = Axis::symmetric(half_width, dx)?;
        let d = set.dim();
        let dt = stable_dt(hi, axis.dx(), d);
        Self::new(Lattice::new(vec![axis; d])?, dt, boundary)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Same domain with spacing and time step halved.
    pub fn refined(&self) -> Result<Self> {
        let axes = self
            .lattice
            .axes()
            .iter()
            .map(|a| Axis::new(a.lo, a.hi, 2 * a.cells))
            .collect::<Result<Vec<_>>>()?;
        Self::new(Lattice::new(axes)?, self.dt / 4.0, self.boundary)
    }

    /// Fails with a configuration error when the explicit scheme would not be monotone.
    pub fn check_cfl(&self, set: &UncertaintySet) -> Result<()> {
        if self.lattice.dim() != set.dim() {
            return Err(Error::Dimension {
                expected: set.dim(),
                got: self.lattice.dim(),
            });
        }
        let hi = set.sigma_hi2();
        let mut total = 0.0;
        for (a, axis) in self.lattice.axes().iter().enumerate() {
            let r = hi * self.dt / (axis.dx() * axis.dx());
            if r > CFL_PER_AXIS * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "CFL violated on axis {a}: hi dt / dx^2 = {r:.4} > {CFL_PER_AXIS}"
                )));
            }
            total += r;
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "CFL violated: sum of axis ratios {total:.4} > 1"
            )));
        }
        Ok(())
    }
}

/// Largest time step satisfying both CFL conditions.
pub fn stable_dt(sigma_hi2: f64, dx: f64, dim: usize) -> f64 {
    CFL_PER_AXIS.min(1.0 / dim as f64) * dx * dx / sigma_hi2
}

/// Grid solution on `[t0, t1]`: values at `t0` plus snapshots at requested times.
#[derive(Debug, Clone)]
pub struct HeatSolution {
    lattice: Lattice,
    t0: f64,
    values: Vec<f64>,
    /// `(t, values)` in increasing time order.
    snapshots: Vec<(f64, Vec<f64>)>,
    steps_taken: usize,
}

impl HeatSolution {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    /// Nodal values at `t0`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn snapshots(&self) -> &[(f64, Vec<f64>)] {
        &self.snapshots
    }
    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }
    /// Multilinear interpolation of the `t0` values.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.lattice.interpolate(&self.values, x)
    }
}

/// Backward solve from terminal data at `t_span.1` to `t_span.0`.
pub fn solve_gheat(
    terminal: &dyn Fn(&[f64]) -> f64,
    set: &UncertaintySet,
    grid: &PdeGrid,
    t_span: (f64, f64),
) -> Result<HeatSolution> {
    let values = nodal(grid.lattice(), terminal);
    solve_gheat_nodal(values, set, grid, t_span, &[])
}

/// Evaluates `f` at every lattice node.
pub fn nodal(lattice: &Lattice, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let d = lattice.dim();
    let mut x = vec![0.0; d];
    (0..lattice.len())
        .map(|k| {
            lattice.coords(k, &mut x);
            f(&x)
        })
        .collect()
}

/// Backward solve from nodal terminal values, recording snapshots at `snapshot_times`
/// (each within `t_span`).
pub fn solve_gheat_nodal(
    terminal: Vec<f64>,
    set: &UncertaintySet,
    grid: &PdeGrid,
    t_span: (f64, f64),
    snapshot_times: &[f64],
) -> Result<HeatSolution> {
    grid.check_cfl(set)?;
    let (t0, t1) = t_span;
    if !(t1 >= t0) {
        return Err(Error::Argument(format!("empty time span ({t0}, {t1})")));
    }
    if terminal.len() != grid.lattice.len() {
        return Err(Error::Dimension {
            expected: grid.lattice.len(),
            got: terminal.len(),
        });
    }
    let tol = 1e-12 * t1.abs().max(1.0);
    let mut checkpoints: Vec<f64> = snapshot_times.to_vec();
    for &t in &checkpoints {
        if t < t0 - tol || t > t1 + tol {
            return Err(Error::Argument(format!(
                "snapshot time {t} outside ({t0}, {t1})"
            )));
        }
    }
    checkpoints.push(t0);
    checkpoints.push(t1);
    checkpoints.sort_by(|a, b| b.partial_cmp(a).unwrap());
    checkpoints.dedup_by(|a, b| (*a - *b).abs() <= tol);

    let wants = |t: f64| snapshot_times.iter().any(|&s| (s - t).abs() <= tol);
    let mut v = terminal;
    let mut scratch = v.clone();
    let mut snapshots = Vec::new();
    let stepper = Stepper::new(set, grid);
    let mut steps_taken = 0;
    if wants(checkpoints[0]) {
        snapshots.push((checkpoints[0], v.clone()));
    }
    for w in checkpoints.windows(2) {
        let span = w[0] - w[1];
        let n_sub = (span / grid.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = span / n_sub as f64;
        for _ in 0..n_sub {
            stepper.step(&v, &mut scratch, h);
            std::mem::swap(&mut v, &mut scratch);
            steps_taken += 1;
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value in G-heat solution near t = {}",
                w[1]
            )));
        }
        if wants(w[1]) {
            snapshots.push((w[1], v.clone()));
        }
    }
    snapshots.reverse();
    Ok(HeatSolution {
        lattice: grid.lattice.clone(),
        t0,
        values: v,
        snapshots,
        steps_taken,
    })
}

struct Stepper<'a> {
    grid: &'a PdeGrid,
    lo: f64,
    hi: f64,
    strides: Vec<usize>,
    inv_dx2: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(set: &UncertaintySet, grid: &'a PdeGrid) -> Self {
        Self {
            grid,
            lo: set.sigma_lo2(),
            hi: set.sigma_hi2(),
            strides: grid.lattice.strides(),
            inv_dx2: grid
                .lattice
                .axes()
                .iter()
                .map(|a| 1.0 / (a.dx() * a.dx()))
                .collect(),
        }
    }

    fn step(&self, v: &[f64], out: &mut [f64], h: f64) {
        let axes = self.grid.lattice.axes();
        if axes.len() == 1 {
            let n = v.len();
            let c = self.inv_dx2[0];
            for i in 1..n - 1 {
                let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * c;
                out[i] = v[i] + h * 0.5 * g_scalar(d2, self.lo, self.hi);
            }
        } else {
            let d = axes.len();
            out.par_iter_mut().enumerate().for_each(|(k, o)| {
                let mut idx = [0usize; 8];
                self.grid.lattice.unflatten(k, &mut idx[..d]);
                if (0..d).any(|a| idx[a] == 0 || idx[a] == axes[a].cells) {
                    return;
                }
                let mut g = 0.0;
                for a in 0..d {
                    let s = self.strides[a];
                    let d2 = (v[k + s] - 2.0 * v[k] + v[k - s]) * self.inv_dx2[a];
                    g += g_scalar(d2, self.lo, self.hi);
                }
                *o = v[k] + h * 0.5 * g;
            });
        }
        apply_boundary(&self.grid.lattice, self.grid.boundary, &self.strides, out);
    }
}

fn apply_boundary(lattice: &Lattice, boundary: Boundary, strides: &[usize], v: &mut [f64]) {
    let axes = lattice.axes();
    let d = axes.len();
    let mut idx = vec![0usize; d];
    for a in 0..d {
        let s = strides[a];
        let last = axes[a].cells;
        for k in 0..v.len() {
            lattice.unflatten(k, &mut idx);
            let (inner, next) = if idx[a] == 0 {
                (k + s, k + 2 * s)
            } else if idx[a] == last {
                (k - s, k - 2 * s)
            } else {
                continue;
            };
            v[k] = match boundary {
                Boundary::LinearExtrapolation => 2.0 * v[inner] - v[next],
                Boundary::Clamp => v[inner],
            };
        }
    }
}

/// How cylinder terminal data enters the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// `phi` itself: the chain computes `E^G(Phi)`.
    Linear,
    /// `exp(phi)`: the chain computes `E^G(exp Phi)`.
    Exp,
}

/// Largest supported `legs * dim`.
pub const DIMENSION_BUDGET: usize = 3;

/// Nested backward chain for `Phi = phi(B_{t_1}, .., B_{t_n})`: leg `l` solves the G-heat
/// equation on `[t_{l-1}, t_l]` in the current state with the earlier observations frozen
/// at lattice nodes, and hands `v_{l+1}(t_l, .., x, x)` down as terminal data.
#[derive(Debug, Clone)]
pub struct ChainSolver {
    phi: CylinderFunctional,
    set: UncertaintySet,
    grid: PdeGrid,
    terminal: Terminal,
}

impl ChainSolver {
    pub fn new(
        phi: &CylinderFunctional,
        set: &UncertaintySet,
        grid: &PdeGrid,
        terminal: Terminal,
    ) -> Result<Self> {
        if phi.dim() != set.dim() {
            return Err(Error::Dimension {
                expected: set.dim(),
                got: phi.dim(),
            });
        }
        if phi.n_legs() * phi.dim() > DIMENSION_BUDGET {
            return Err(Error::Unsupported(format!(
                "cylinder chain with {} legs in dimension {} exceeds the budget legs * dim <= {}",
                phi.n_legs(),
                phi.dim(),
                DIMENSION_BUDGET
            )));
        }
        grid.check_cfl(set)?;
        Ok(Self {
            phi: phi.clone(),
            set: set.clone(),
            grid: grid.clone(),
            terminal,
        })
    }

    pub fn n_legs(&self) -> usize {
        self.phi.n_legs()
    }

    /// `[t_{l-1}, t_l]` for 0-based leg `l`.
    pub fn leg_span(&self, l: usize) -> (f64, f64) {
        let times = self.phi.times();
        (if l == 0 { 0.0 } else { times[l - 1] }, times[l])
    }

    fn transform(&self, v: f64) -> f64 {
        match self.terminal {
            Terminal::Linear => v,
            Terminal::Exp => v.exp(),
        }
    }

    /// Terminal data of leg `l` for the frozen prefix (one node index per earlier leg).
    fn leg_terminal(&self, l: usize, prefix: &[usize]) -> Result<Vec<f64>> {
        let lattice = self.grid.lattice();
        let axis = &lattice.axes()[0];
        let n = self.n_legs();
        if l + 1 == n {
            let d = self.set.dim();
            let mut xs = vec![0.0; (prefix.len()) * d + d];
            for (i, &p) in prefix.iter().enumerate() {
                xs[i] = axis.coord(p);
            }
            let mut x = vec![0.0; d];
            Ok((0..lattice.len())
                .map(|k| {
                    lattice.coords(k, &mut x);
                    xs[prefix.len() * d..].copy_from_slice(&x);
                    self.transform(self.phi.eval(&xs))
                })
                .collect())
        } else {
            (0..lattice.len())
                .into_par_iter()
                .map(|j| {
                    let mut next = prefix.to_vec();
                    next.push(j);
                    Ok(self.leg_start(l + 1, &next)?[j])
                })
                .collect()
        }
    }

    /// `v_l(t_{l-1}, prefix, .)` on the lattice.
    pub fn leg_start(&self, l: usize, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.solve_leg(l, prefix, &[])?.values)
    }

    /// Solves leg `l` for `prefix`, with snapshots at `snapshot_times`.
    pub fn solve_leg(
        &self,
        l: usize,
        prefix: &[usize],
        snapshot_times: &[f64],
    ) -> Result<HeatSolution> {
        let terminal = self.leg_terminal(l, prefix)?;
        solve_gheat_nodal(
            terminal,
            &self.set,
            &self.grid,
            self.leg_span(l),
            snapshot_times,
        )
    }

    /// `v_1(0, 0)`.
    pub fn value(&self) -> Result<f64> {
        let start = self.solve_leg(0, &[], &[])?;
        Ok(start.value_at(&vec![0.0; self.set.dim()]))
    }
}

/// `E^G(Phi)` for a cylinder functional.
pub fn cylinder_expectation(
    phi: &CylinderFunctional,
    set: &UncertaintySet,
    grid: &PdeGrid,
) -> Result<f64> {
    ChainSolver::new(phi, set, grid, Terminal::Linear)?.value()
}

/// `E^G(Phi)` or `E^G(exp Phi)` depending on `terminal`.
pub fn cylinder_expectation_with(
    phi: &CylinderFunctional,
    set: &UncertaintySet,
    grid: &PdeGrid,
    terminal: Terminal,
) -> Result<f64> {
    ChainSolver::new(phi, set, grid, terminal)?.value()
}

/// One solved leg with snapshots on the Monte Carlo steps `first_step..=last_step`.
#[derive(Debug, Clone)]
pub struct LegSolution {
    pub leg: usize,
    pub prefix: Vec<usize>,
    pub first_step: usize,
    pub last_step: usize,
    pub heat: HeatSolution,
}

/// Lazily solved chain for a functional whose observation times lie on a Monte Carlo grid.
///
/// Legs are keyed by their frozen prefix nodes and solved only for prefixes requested
/// via [`ValueChain::ensure`].
#[derive(Debug)]
pub struct ValueChain {
    solver: ChainSolver,
    mc_dt: f64,
    /// Global step index of each observation time (`leg_steps[0] = 0`).
    leg_steps: Vec<usize>,
    legs: Vec<BTreeMap<Vec<usize>, LegSolution>>,
}

impl ValueChain {
    /// `phi.times()` must be multiples of `mc_dt`.
    pub fn new(
        phi: &CylinderFunctional,
        set: &UncertaintySet,
        grid: &PdeGrid,
        terminal: Terminal,
        mc_dt: f64,
    ) -> Result<Self> {
        let solver = ChainSolver::new(phi, set, grid, terminal)?;
        let mut leg_steps = vec![0];
        for &t in phi.times() {
            let k = (t / mc_dt).round();
            if (k * mc_dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::Argument(format!(
                    "observation time {t} is not on the Monte Carlo grid (dt = {mc_dt})"
                )));
            }
            leg_steps.push(k as usize);
        }
        let n = phi.n_legs();
        Ok(Self {
            solver,
            mc_dt,
            leg_steps,
            legs: vec![BTreeMap::new(); n],
        })
    }

    pub fn n_legs(&self) -> usize {
        self.solver.n_legs()
    }
    pub fn leg_steps(&self) -> &[usize] {
        &self.leg_steps
    }
    pub fn lattice(&self) -> &Lattice {
        self.solver.grid.lattice()
    }
    pub fn set(&self) -> &UncertaintySet {
        &self.solver.set
    }

    /// Solves leg `l` for every prefix not yet cached.
    pub fn ensure(&mut self, l: usize, prefixes: &[Vec<usize>]) -> Result<()> {
        let (a, b) = (self.leg_steps[l], self.leg_steps[l + 1]);
        let times: Vec<f64> = (a..=b).map(|k| k as f64 * self.mc_dt).collect();
        let missing: Vec<&Vec<usize>> = prefixes
            .iter()
            .filter(|p| !self.legs[l].contains_key(*p))
            .collect();
        let solved: Vec<LegSolution> = missing
            .par_iter()
            .map(|p| {
                let heat = self.solver.solve_leg(l, p, &times)?;
                Ok(LegSolution {
                    leg: l,
                    prefix: (*p).clone(),
                    first_step: a,
                    last_step: b,
                    heat,
                })
            })
            .collect::<Result<_>>()?;
        for s in solved {
            self.legs[l].insert(s.prefix.clone(), s);
        }
        Ok(())
    }

    pub fn leg(&self, l: usize, prefix: &[usize]) -> Option<&LegSolution> {
        self.legs[l].get(prefix)
    }

    pub fn solved_legs(&self) -> impl Iterator<Item = &LegSolution> {
        self.legs.iter().flat_map(|m| m.values())
    }

    /// `v_1(0, 0)` (solves the first leg if needed).
    pub fn value(&mut self) -> Result<f64> {
        self.ensure(0, &[vec![]])?;
        let leg = self.leg(0, &[]).expect("first leg solved");
        Ok(leg.heat.value_at(&vec![0.0; self.solver.set.dim()]))
    }
}

/// Feedback tables `U_l = grad log v_l` and worst-case variances per solved leg.
#[derive(Debug, Clone)]
pub struct FeedbackControl {
    pub legs: Vec<LegFeedback>,
    /// `sup |U|` over all tables.
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct LegFeedback {
    pub leg: usize,
    pub prefix: Vec<usize>,
    pub first_step: usize,
    /// Local step `k - first_step`; the entry at the leg endpoint is zero.
    pub gradient: FeedbackTable,
    /// Per-axis variance maximising the scheme flux.
    pub worst_variance: FeedbackTable,
}

/// Converts every solved leg of `chain` into feedback tables.
pub fn extract_feedback(chain: &ValueChain) -> Result<FeedbackControl> {
    let legs = chain
        .solved_legs()
        .map(|leg| leg_feedback(leg, chain.set()))
        .collect::<Result<Vec<_>>>()?;
    let bound = legs
        .iter()
        .map(|l| l.gradient.sup_norm())
        .fold(0.0, f64::max);
    Ok(FeedbackControl { legs, bound })
}

/// Centred differences of `log v` per snapshot (one-sided at edges), zero at the leg end.
pub fn leg_feedback(leg: &LegSolution, set: &UncertaintySet) -> Result<LegFeedback> {
    let lattice = leg.heat.lattice().clone();
    let d = lattice.dim();
    let snaps = leg.heat.snapshots();
    let last = snaps.len() - 1;
    let mut grads = Vec::with_capacity(snaps.len());
    let mut worst = Vec::with_capacity(snaps.len());
    for (i, (t, v)) in snaps.iter().enumerate() {
        if let Some(k) = v.iter().position(|x| !(*x > 0.0)) {
            return Err(Error::Numerical(format!(
                "non-positive value function {} at node {k}, t = {t}; check CFL and boundary",
                v[k]
            )));
        }
        let logv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        let (g, w) = derivatives(&lattice, &logv, v, set);
        if i == last {
            grads.push(vec![0.0; lattice.len() * d]);
        } else {
            grads.push(g);
        }
        worst.push(w);
    }
    Ok(LegFeedback {
        leg: leg.leg,
        prefix: leg.prefix.clone(),
        first_step: leg.first_step,
        gradient: FeedbackTable::new(lattice.clone(), d, grads)?,
        worst_variance: FeedbackTable::new(lattice, d, worst)?,
    })
}

/// Worst-case per-axis variances for nodal values `v` (`hi` where `v_aa >= 0`).
pub fn worst_variance(lattice: &Lattice, v: &[f64], set: &UncertaintySet) -> Vec<f64> {
    derivatives(lattice, v, v, set).1
}

fn derivatives(
    lattice: &Lattice,
    f: &[f64],
    v: &[f64],
    set: &UncertaintySet,
) -> (Vec<f64>, Vec<f64>) {
    let d = lattice.dim();
    let strides = lattice.strides();
    let axes = lattice.axes();
    let mut grad = vec![0.0; lattice.len() * d];
    let mut worst = vec![0.0; lattice.len() * d];
    let mut idx = vec![0usize; d];
    for k in 0..lattice.len() {
        lattice.unflatten(k, &mut idx);
        for a in 0..d {
            let s = strides[a];
            let h = axes[a].dx();
            let last = axes[a].cells;
            grad[k * d + a] = if idx[a] == 0 {
                (f[k + s] - f[k]) / h
            } else if idx[a] == last {
                (f[k] - f[k - s]) / h
            } else {
                (f[k + s] - f[k - s]) / (2.0 * h)
            };
            let c = idx[a].clamp(1, last - 1);
            let kc = k - idx[a] * s + c * s;
            let d2 = v[kc + s] - 2.0 * v[kc] + v[kc - s];
            worst[k * d + a] = if d2 >= 0.0 {
                set.sigma_hi2()
            } else {
                set.sigma_lo2()
            };
        }
    }
    (grad, worst)
}

/// Snaps observation times onto a Monte Carlo grid, warning when a time moves.
pub fn snap_times(phi: &CylinderFunctional, dt: f64, horizon: f64) -> Result<CylinderFunctional> {
    let n = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(phi.n_legs());
    for &t in phi.times() {
        let k = ((t / dt).round() as usize).clamp(1, n);
        let s = k as f64 * dt;
        if (s - t).abs() > 1e-9 * t.max(1.0) {
            warn!("observation time {t} snapped to grid time {s}");
        }
        if out.last().is_some_and(|&p: &f64| s <= p) {
            return Err(Error::Argument(format!(
                "observation times collapse after snapping to dt = {dt}"
            )));
        }
        out.push(s);
    }
    phi.with_times(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn set() -> UncertaintySet {
        UncertaintySet::scalar(0.25, 1.0).unwrap()
    }

    fn functional(
        times: Vec<f64>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> CylinderFunctional {
        CylinderFunctional::new("test", times, 1, Arc::new(f), 10.0, 10.0).unwrap()
    }

    #[test]
    fn cfl_violation_is_a_config_error() {
        let lat = Lattice::new(vec![Axis::symmetric(3.0, 0.1).unwrap()]).unwrap();
        let grid = PdeGrid::new(lat, 0.01, Boundary::Clamp).unwrap();
        let err = solve_gheat(&|x| x[0], &set(), &grid, (0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn three_dimensional_grid_respects_summed_cfl() {
        let s3 = UncertaintySet::diagonal_box(3, 0.5, 1.0).unwrap();
        let g = PdeGrid::for_set(&s3, 0.1, 0.2, 0.0, Boundary::Clamp).unwrap();
        g.check_cfl(&s3).unwrap();
        let lat = g.lattice().clone();
        let dx = lat.axes()[0].dx();
        let too_big = PdeGrid::new(lat, 0.5 * dx * dx, Boundary::Clamp).unwrap();
        assert!(too_big.check_cfl(&s3).is_err());
    }

    #[test]
    fn constants_are_preserved() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.1, 0.0, Boundary::LinearExtrapolation).unwrap();
        let sol = solve_gheat(&|_| 2.5, &set(), &grid, (0.0, 1.0)).unwrap();
        assert!(sol.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn scheme_is_monotone_nodewise() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.1, 0.0, Boundary::Clamp).unwrap();
        let a = solve_gheat(&|x| (x[0] * x[0]).min(4.0), &set(), &grid, (0.0, 1.0)).unwrap();
        let c = solve_gheat(
            &|x| (x[0] * x[0]).min(4.0) + 0.2 + 0.1 * x[0].sin(),
            &set(),
            &grid,
            (0.0, 1.0),
        )
        .unwrap();
        for (u, w) in a.values().iter().zip(c.values()) {
            assert!(u <= w);
        }
    }

    #[test]
    fn subadditivity_transfers_to_the_solution() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.05, 0.0, Boundary::LinearExtrapolation).unwrap();
        let f = |x: &[f64]| (x[0] * x[0]).min(4.0);
        let g = |x: &[f64]| -(x[0] - 0.5).abs();
        let uf = solve_gheat(&f, &set(), &grid, (0.0, 1.0))
            .unwrap()
            .value_at(&[0.0]);
        let ug = solve_gheat(&g, &set(), &grid, (0.0, 1.0))
            .unwrap()
            .value_at(&[0.0]);
        let ufg = solve_gheat(&|x| f(x) + g(x), &set(), &grid, (0.0, 1.0))
            .unwrap()
            .value_at(&[0.0]);
        assert!(ufg <= uf + ug + 1e-3);
    }

    #[test]
    fn linear_terminal_has_zero_mean() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.05, 0.0, Boundary::LinearExtrapolation).unwrap();
        let u = solve_gheat(&|x| x[0], &set(), &grid, (0.0, 1.0)).unwrap();
        assert!(u.value_at(&[0.0]).abs() < 1e-6);
    }

    #[test]
    fn quadratic_terminal_picks_extreme_variances() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.05, 0.0, Boundary::LinearExtrapolation).unwrap();
        let up = solve_gheat(&|x| x[0] * x[0], &set(), &grid, (0.0, 1.0)).unwrap();
        let down = solve_gheat(&|x| -x[0] * x[0], &set(), &grid, (0.0, 1.0)).unwrap();
        assert!((up.value_at(&[0.0]) - 1.0).abs() < 5e-3);
        assert!((down.value_at(&[0.0]) + 0.25).abs() < 0.25 * 5e-3);
    }

    #[test]
    fn two_dimensional_quadratic() {
        let s2 = UncertaintySet::diagonal_box(2, 0.25, 1.0).unwrap();
        let grid = PdeGrid::for_set(&s2, 0.5, 0.1, 0.0, Boundary::LinearExtrapolation).unwrap();
        let u = solve_gheat(&|x| x[0] * x[0] - x[1] * x[1], &s2, &grid, (0.0, 0.5)).unwrap();
        // sup picks hi on axis 0 and lo on axis 1
        assert!((u.value_at(&[0.0, 0.0]) - (1.0 - 0.25) * 0.5).abs() < 1e-6);
    }

    #[test]
    fn single_leg_chain_equals_heat_solution() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.05, 0.0, Boundary::LinearExtrapolation).unwrap();
        let phi = functional(vec![1.0], |x| (x[0] * x[0]).min(4.0));
        let chain = cylinder_expectation(&phi, &set(), &grid).unwrap();
        let heat = solve_gheat(&|x| (x[0] * x[0]).min(4.0), &set(), &grid, (0.0, 1.0))
            .unwrap()
            .value_at(&[0.0]);
        assert_eq!(chain, heat);
    }

    #[test]
    fn martingale_observation_has_zero_mean() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.1, 0.0, Boundary::LinearExtrapolation).unwrap();
        let phi = functional(vec![0.5, 1.0], |x| x[0] + 0.0 * x[1]);
        let v = cylinder_expectation(&phi, &set(), &grid).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn budget_is_enforced() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.5, 0.0, Boundary::Clamp).unwrap();
        let phi = functional(vec![0.25, 0.5, 0.75, 1.0], |x| x[3]);
        assert!(matches!(
            cylinder_expectation(&phi, &set(), &grid),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn exp_terminal_gives_log_linear_feedback() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.05, 0.0, Boundary::LinearExtrapolation).unwrap();
        let phi = functional(vec![1.0], |x| x[0]);
        let s = set();
        let mut chain = ValueChain::new(&phi, &s, &grid, Terminal::Exp, 0.05).unwrap();
        let v = chain.value().unwrap();
        // E^G(exp(B_1)) = exp(hi / 2) for the convex terminal
        assert!((v - 0.5_f64.exp()).abs() < 5e-3 * v);
        let fb = extract_feedback(&chain).unwrap();
        let table = &fb.legs[0].gradient;
        let lat = table.lattice();
        for k in 0..table.n_steps() - 1 {
            let s = table.step(k);
            for node in 0..lat.len() {
                let mut x = [0.0];
                lat.coords(node, &mut x);
                if x[0].abs() <= 1.5 {
                    assert!(
                        (s[node] - 1.0).abs() < 1e-3,
                        "step {k} x {} -> {}",
                        x[0],
                        s[node]
                    );
                }
            }
        }
        assert!(table.step(table.n_steps() - 1).iter().all(|&u| u == 0.0));
        assert!(fb.bound.is_finite());
    }

    #[test]
    fn constant_terminal_gives_zero_feedback() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.1, 0.0, Boundary::LinearExtrapolation).unwrap();
        let phi = functional(vec![1.0], |_| 0.7);
        let s = set();
        let mut chain = ValueChain::new(&phi, &s, &grid, Terminal::Exp, 0.1).unwrap();
        assert!((chain.value().unwrap() - 0.7_f64.exp()).abs() < 1e-12);
        let fb = extract_feedback(&chain).unwrap();
        assert!(fb.bound < 1e-12);
    }

    #[test]
    fn nonpositive_value_is_a_numerical_failure() {
        let grid = PdeGrid::for_set(&set(), 1.0, 0.1, 0.0, Boundary::LinearExtrapolation).unwrap();
        let phi = functional(vec![1.0], |x| x[0]);
        let s = set();
        let mut chain = ValueChain::new(&phi, &s, &grid, Terminal::Linear, 0.1).unwrap();
        chain.value().unwrap();
        assert!(matches!(extract_feedback(&chain), Err(Error::Numerical(_))));
    }

    #[test]
    fn off_grid_observation_times_snap() {
        let phi = functional(vec![0.33, 1.0], |x| x[1]);
        let s = snap_times(&phi, 0.1, 1.0).unwrap();
        assert!((s.times()[0] - 0.3).abs() < 1e-12);
        let collapse = functional(vec![0.31, 0.33], |x| x[1]);
        assert!(snap_times(&collapse, 0.1, 1.0).is_err());
    }
}

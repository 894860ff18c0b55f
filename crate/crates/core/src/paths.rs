//! Controlled simulation of G-Brownian motion.
//!
//! Under a volatility control `theta` with `theta theta^T in Sigma`, the canonical process
//! is simulated as `B_{k+1} = B_k + theta_k xi_k sqrt(dt)` and its quadratic variation as
//! `<B>_{k+1} = <B>_k + theta_k theta_k^T dt`. Controls are left-point on the grid.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::model::{g_eval, outer_square_packed, SymMatrix, TimeGrid, UncertaintySet};
use crate::rng::NoiseSource;

/// A Markov field `(k, t_k, x) -> value` evaluated at grid step `k`.
pub trait MarkovField: Send + Sync {
    /// Number of output components.
    fn width(&self) -> usize;
    fn eval(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]);
}

/// Markov field given by a closure.
pub struct FnField<F> {
    width: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(width: usize, f: F) -> Self {
        Self { width, f }
    }
}

impl<F> MarkovField for FnField<F>
where
    F: Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn width(&self) -> usize {
        self.width
    }
    fn eval(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(k, t, x, out)
    }
}

/// Lattice lookup table `value(t_k, x)` with nearest-node evaluation and edge clamping.
#[derive(Debug, Clone)]
pub struct FeedbackTable {
    lattice: Lattice,
    width: usize,
    steps: Vec<Vec<f64>>,
}

impl FeedbackTable {
    /// `steps[k]` holds `width` values per lattice node for grid step `k`.
    pub fn new(lattice: Lattice, width: usize, steps: Vec<Vec<f64>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Argument(
                "feedback table needs at least one step".into(),
            ));
        }
        for s in &steps {
            if s.len() != lattice.len() * width {
                return Err(Error::Dimension {
                    expected: lattice.len() * width,
                    got: s.len(),
                });
            }
        }
        Ok(Self {
            lattice,
            width,
            steps,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
    pub fn step(&self, k: usize) -> &[f64] {
        &self.steps[k.min(self.steps.len() - 1)]
    }

    /// Largest absolute entry over all steps and nodes.
    pub fn sup_norm(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl MarkovField for FeedbackTable {
    fn width(&self) -> usize {
        self.width
    }
    fn eval(&self, k: usize, _t: f64, x: &[f64], out: &mut [f64]) {
        let node = self.lattice.nearest(x);
        let s = self.step(k);
        out.copy_from_slice(&s[node * self.width..(node + 1) * self.width]);
    }
}

/// Volatility control `theta` (dense `d x d`, row-major) with `theta theta^T in Sigma`.
#[derive(Clone)]
pub enum ControlPolicy {
    /// Per-step matrices; a single entry is used for every step.
    OpenLoop { name: String, thetas: Vec<Vec<f64>> },
    /// `theta(t_k, x)` evaluated on the current state.
    MarkovFeedback {
        name: String,
        field: Arc<dyn MarkovField>,
    },
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlPolicy::OpenLoop { name, thetas } => f
                .debug_struct("OpenLoop")
                .field("name", name)
                .field("steps", &thetas.len())
                .finish(),
            ControlPolicy::MarkovFeedback { name, .. } => f
                .debug_struct("MarkovFeedback")
                .field("name", name)
                .finish(),
        }
    }
}

impl ControlPolicy {
    /// Constant diagonal control with the given per-axis variances.
    pub fn constant_variance(variances: &[f64]) -> Self {
        let d = variances.len();
        let mut theta = vec![0.0; d * d];
        for (i, v) in variances.iter().enumerate() {
            theta[i * d + i] = v.sqrt();
        }
        let label: Vec<String> = variances.iter().map(|v| format!("{v}")).collect();
        ControlPolicy::OpenLoop {
            name: format!("const[{}]", label.join(",")),
            thetas: vec![theta],
        }
    }

    /// One constant policy per corner of the covariance box.
    pub fn extreme_family(set: &UncertaintySet) -> Vec<Self> {
        crate::model::extreme_points(set)
            .iter()
            .map(|s| Self::constant_variance(&s.diag()))
            .collect()
    }

    /// Diagonal feedback from per-axis variances `field(k, t, x) -> [s_1, .., s_d]`.
    pub fn variance_feedback(name: impl Into<String>, field: Arc<dyn MarkovField>) -> Self {
        let d = field.width();
        let theta_field = FnField::new(d * d, move |k, t, x, out: &mut [f64]| {
            let mut var = [0.0; 8];
            field.eval(k, t, x, &mut var[..d]);
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = var[i].max(0.0).sqrt();
            }
        });
        ControlPolicy::MarkovFeedback {
            name: name.into(),
            field: Arc::new(theta_field),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ControlPolicy::OpenLoop { name, .. } | ControlPolicy::MarkovFeedback { name, .. } => {
                name
            }
        }
    }

    #[inline]
    pub fn theta(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            ControlPolicy::OpenLoop { thetas, .. } => {
                out.copy_from_slice(&thetas[k.min(thetas.len() - 1)]);
            }
            ControlPolicy::MarkovFeedback { field, .. } => field.eval(k, t, x, out),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let width = match self {
            ControlPolicy::OpenLoop { thetas, .. } => {
                if thetas.is_empty() {
                    return Err(Error::Argument("open-loop policy without steps".into()));
                }
                thetas.iter().map(Vec::len).max().unwrap_or(0)
            }
            ControlPolicy::MarkovFeedback { field, .. } => field.width(),
        };
        if width != d * d {
            return Err(Error::Dimension {
                expected: d * d,
                got: width,
            });
        }
        Ok(())
    }
}

/// Bounded drift control `eta`.
#[derive(Clone)]
pub struct DriftControl {
    kind: DriftKind,
    bound: f64,
    dim: usize,
    name: String,
}

#[derive(Clone)]
enum DriftKind {
    Zero,
    /// Per-step vectors; a single entry is used for every step.
    Deterministic(Vec<Vec<f64>>),
    MarkovFeedback(Arc<dyn MarkovField>),
}

impl fmt::Debug for DriftControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftControl")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .field("dim", &self.dim)
            .finish()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl DriftControl {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: DriftKind::Zero,
            bound: 0.0,
            dim,
            name: "zero".into(),
        }
    }

    pub fn constant(eta: Vec<f64>) -> Self {
        let bound = norm(&eta);
        Self {
            dim: eta.len(),
            name: format!("const{eta:?}"),
            kind: DriftKind::Deterministic(vec![eta]),
            bound,
        }
    }

    /// Deterministic per-step drift; fails if some `|eta_k|` exceeds `bound`.
    pub fn deterministic(
        name: impl Into<String>,
        steps: Vec<Vec<f64>>,
        bound: f64,
    ) -> Result<Self> {
        let dim = steps
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Argument("drift needs at least one step".into()))?;
        for (k, s) in steps.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: s.len(),
                });
            }
            if !s.iter().all(|v| v.is_finite()) || norm(s) > bound * (1.0 + 1e-12) {
                return Err(Error::Argument(format!(
                    "drift at step {k} has norm {} above bound {bound}",
                    norm(s)
                )));
            }
        }
        Ok(Self {
            kind: DriftKind::Deterministic(steps),
            bound,
            dim,
            name: name.into(),
        })
    }

    /// Markov feedback drift, radially truncated to `|eta| <= bound`.
    pub fn feedback(
        name: impl Into<String>,
        field: Arc<dyn MarkovField>,
        bound: f64,
    ) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::Argument(format!(
                "feedback drift needs a finite bound, got {bound}"
            )));
        }
        Ok(Self {
            dim: field.width(),
            kind: DriftKind::MarkovFeedback(field),
            bound,
            name: name.into(),
        })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DriftKind::Zero)
    }

    #[inline]
    pub fn eval(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            DriftKind::Zero => out.fill(0.0),
            DriftKind::Deterministic(steps) => out.copy_from_slice(&steps[k.min(steps.len() - 1)]),
            DriftKind::MarkovFeedback(field) => {
                field.eval(k, t, x, out);
                let n = norm(out);
                if n > self.bound {
                    let s = self.bound / n;
                    out.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }

    /// Same control scaled by `c` (bound scaled accordingly).
    pub fn scaled(&self, c: f64) -> Self {
        let kind = match &self.kind {
            DriftKind::Zero => DriftKind::Zero,
            DriftKind::Deterministic(steps) => DriftKind::Deterministic(
                steps
                    .iter()
                    .map(|s| s.iter().map(|v| v * c).collect())
                    .collect(),
            ),
            DriftKind::MarkovFeedback(field) => {
                let inner = field.clone();
                let bound = self.bound;
                let w = inner.width();
                DriftKind::MarkovFeedback(Arc::new(FnField::new(
                    w,
                    move |k, t, x, out: &mut [f64]| {
                        inner.eval(k, t, x, out);
                        let n = norm(out);
                        let s = if n > bound { bound / n } else { 1.0 };
                        out.iter_mut().for_each(|v| *v *= s * c);
                    },
                )))
            }
        };
        Self {
            kind,
            bound: self.bound * c.abs(),
            dim: self.dim,
            name: format!("{}*{c}", self.name),
        }
    }
}

/// Simulated `(B, <B>)` trajectories on a time grid.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    /// `[path][step 0..=n][axis]`
    b: Vec<f64>,
    /// `[path][step 0..=n][packed upper triangle]`
    qv: Vec<f64>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    fn packed_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// `B_{t_k}` on path `p`.
    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let n = self.grid.n_steps() + 1;
        let off = (p * n + k) * self.dim;
        &self.b[off..off + self.dim]
    }

    /// Whole trajectory of path `p` (flattened `[step][axis]`).
    pub fn path(&self, p: usize) -> &[f64] {
        let n = (self.grid.n_steps() + 1) * self.dim;
        &self.b[p * n..(p + 1) * n]
    }

    /// `<B>_{t_k}` on path `p`.
    pub fn qv(&self, p: usize, k: usize) -> SymMatrix {
        let n = self.grid.n_steps() + 1;
        let m = self.packed_len();
        let off = (p * n + k) * m;
        unpack(self.dim, &self.qv[off..off + m])
    }

    /// Increment `B_{t_{k+1}} - B_{t_k}`.
    pub fn increment(&self, p: usize, k: usize, out: &mut [f64]) {
        let a = self.state(p, k);
        let b = self.state(p, k + 1);
        for i in 0..self.dim {
            out[i] = b[i] - a[i];
        }
    }

    /// Increment `<B>_{t_{k+1}} - <B>_{t_k}`.
    pub fn qv_increment(&self, p: usize, k: usize) -> SymMatrix {
        self.qv(p, k + 1).sub(&self.qv(p, k))
    }

    /// Bundle with the paths listed in `order` (used for reordering checks).
    pub fn reordered(&self, order: &[usize]) -> PathBundle {
        let nb = (self.grid.n_steps() + 1) * self.dim;
        let nq = (self.grid.n_steps() + 1) * self.packed_len();
        let mut b = Vec::with_capacity(order.len() * nb);
        let mut qv = Vec::with_capacity(order.len() * nq);
        for &p in order {
            b.extend_from_slice(&self.b[p * nb..(p + 1) * nb]);
            qv.extend_from_slice(&self.qv[p * nq..(p + 1) * nq]);
        }
        PathBundle {
            grid: self.grid.clone(),
            dim: self.dim,
            n_paths: order.len(),
            seed: self.seed,
            b,
            qv,
        }
    }
}

fn unpack(dim: usize, packed: &[f64]) -> SymMatrix {
    let mut m = SymMatrix::zeros(dim);
    let mut it = packed.iter();
    for i in 0..dim {
        for j in i..dim {
            m.set(i, j, *it.next().unwrap());
        }
    }
    m
}

/// Scratch buffers and results for one simulated path.
#[derive(Debug, Clone)]
pub struct PathScratch {
    dim: usize,
    n_steps: usize,
    /// `B` trajectory, `[step][axis]`
    pub b: Vec<f64>,
    /// `<B>` trajectory, `[step][packed]`
    pub qv: Vec<f64>,
    /// Drift-shifted trajectory `B^eta` (equal to `b` without drift).
    pub shifted: Vec<f64>,
    /// Left-point drift values `eta_k`, `[step][axis]`.
    pub eta: Vec<f64>,
    theta: Vec<f64>,
    xi: Vec<f64>,
    dqv: Vec<f64>,
}

impl PathScratch {
    pub fn new(dim: usize, n_steps: usize) -> Self {
        let m = dim * (dim + 1) / 2;
        Self {
            dim,
            n_steps,
            b: vec![0.0; (n_steps + 1) * dim],
            qv: vec![0.0; (n_steps + 1) * m],
            shifted: vec![0.0; (n_steps + 1) * dim],
            eta: vec![0.0; n_steps * dim],
            theta: vec![0.0; dim * dim],
            xi: vec![0.0; dim],
            dqv: vec![0.0; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn state(&self, k: usize) -> &[f64] {
        &self.b[k * self.dim..(k + 1) * self.dim]
    }
    pub fn shifted_state(&self, k: usize) -> &[f64] {
        &self.shifted[k * self.dim..(k + 1) * self.dim]
    }
    pub fn eta_at(&self, k: usize) -> &[f64] {
        &self.eta[k * self.dim..(k + 1) * self.dim]
    }
    pub fn qv_at(&self, k: usize) -> SymMatrix {
        let m = self.dim * (self.dim + 1) / 2;
        unpack(self.dim, &self.qv[k * m..(k + 1) * m])
    }
    pub fn qv_increment(&self, k: usize) -> SymMatrix {
        self.qv_at(k + 1).sub(&self.qv_at(k))
    }
}

/// Simulator for `(B, <B>)` under a volatility policy, optionally with a drift control
/// whose shifted state `B^eta` is also the state seen by Markov policies.
pub struct Simulator<'a> {
    set: &'a UncertaintySet,
    grid: &'a TimeGrid,
    policy: &'a ControlPolicy,
    eta: Option<&'a DriftControl>,
    noise: NoiseSource,
}

impl<'a> Simulator<'a> {
    pub fn new(
        set: &'a UncertaintySet,
        grid: &'a TimeGrid,
        policy: &'a ControlPolicy,
        eta: Option<&'a DriftControl>,
        seed: u64,
    ) -> Result<Self> {
        policy.check_dim(set.dim())?;
        if let Some(e) = eta {
            if e.dim() != set.dim() {
                return Err(Error::Dimension {
                    expected: set.dim(),
                    got: e.dim(),
                });
            }
        }
        Ok(Self {
            set,
            grid,
            policy,
            eta: eta.filter(|e| !e.is_zero()),
            noise: NoiseSource::new(seed, set.dim()),
        })
    }

    pub fn scratch(&self) -> PathScratch {
        PathScratch::new(self.set.dim(), self.grid.n_steps())
    }

    /// Simulates path `p` into `s`.
    pub fn run(&self, p: usize, s: &mut PathScratch) -> Result<()> {
        let d = self.set.dim();
        let m = d * (d + 1) / 2;
        let dt = self.grid.dt();
        let sq = dt.sqrt();
        let mut noise = self.noise.stream(p, 0);
        s.b[..d].fill(0.0);
        s.shifted[..d].fill(0.0);
        s.qv[..m].fill(0.0);
        for k in 0..self.grid.n_steps() {
            let t = self.grid.time(k);
            self.policy
                .theta(k, t, &s.shifted[k * d..(k + 1) * d], &mut s.theta);
            outer_square_packed(d, &s.theta, &mut s.dqv);
            if !self.set.contains_packed(&s.dqv, 1.0) {
                return Err(Error::ControlViolation {
                    step: k,
                    path: p,
                    detail: format!(
                        "theta theta^T = {:?} outside the uncertainty set",
                        unpack(d, &s.dqv)
                    ),
                });
            }
            noise.next_step(&mut s.xi);
            for q in s.dqv.iter_mut() {
                *q *= dt;
            }
            for q in 0..m {
                s.qv[(k + 1) * m + q] = s.qv[k * m + q] + s.dqv[q];
            }
            if let Some(eta) = self.eta {
                eta.eval(
                    k,
                    t,
                    &s.shifted[k * d..(k + 1) * d],
                    &mut s.eta[k * d..(k + 1) * d],
                );
            }
            for i in 0..d {
                let db: f64 = (0..d).map(|j| s.theta[i * d + j] * s.xi[j]).sum::<f64>() * sq;
                s.b[(k + 1) * d + i] = s.b[k * d + i] + db;
                let mut drift = 0.0;
                if self.eta.is_some() {
                    for j in 0..d {
                        drift += s.dqv[packed_index(d, i, j)] * s.eta[k * d + j];
                    }
                }
                s.shifted[(k + 1) * d + i] = s.shifted[k * d + i] + db + drift;
            }
        }
        if self.eta.is_none() {
            s.eta.fill(0.0);
        }
        Ok(())
    }

    /// Runs `f` on every path (in parallel) and returns the results in path order.
    pub fn map_paths<T, F>(&self, n_paths: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &PathScratch) -> T + Sync + Send,
    {
        (0..n_paths)
            .into_par_iter()
            .map_init(
                || self.scratch(),
                |s, p| {
                    self.run(p, s)?;
                    Ok(f(p, s))
                },
            )
            .collect()
    }
}

#[inline]
pub(crate) fn packed_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * d - i + 1) / 2 + (j - i)
}

/// Simulates `n_paths` trajectories of `(B, <B>)` under `policy`.
pub fn simulate(
    set: &UncertaintySet,
    grid: &TimeGrid,
    policy: &ControlPolicy,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_with_drift(set, grid, policy, None, n_paths, seed)
}

/// Like [`simulate`], but Markov policies observe the drift-shifted state `B^eta`.
pub fn simulate_with_drift(
    set: &UncertaintySet,
    grid: &TimeGrid,
    policy: &ControlPolicy,
    eta: Option<&DriftControl>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let sim = Simulator::new(set, grid, policy, eta, seed)?;
    let parts = sim.map_paths(n_paths, |_, s| (s.b.clone(), s.qv.clone()))?;
    let mut b = Vec::new();
    let mut qv = Vec::new();
    for (pb, pq) in parts {
        b.extend(pb);
        qv.extend(pq);
    }
    Ok(PathBundle {
        grid: grid.clone(),
        dim: set.dim(),
        n_paths,
        seed,
        b,
        qv,
    })
}

/// Evaluates `eta` along the drift-shifted recursion of path `p`, writing the shifted
/// states (`(n+1) d` values) and left-point drifts (`n d` values).
fn shift_path(
    bundle: &PathBundle,
    eta: &DriftControl,
    p: usize,
    shifted: &mut [f64],
    etas: &mut [f64],
) {
    let d = bundle.dim;
    let grid = &bundle.grid;
    let mut db = vec![0.0; d];
    shifted[..d].fill(0.0);
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        let (prev, next) = shifted.split_at_mut((k + 1) * d);
        let x = &prev[k * d..];
        eta.eval(k, t, x, &mut etas[k * d..(k + 1) * d]);
        bundle.increment(p, k, &mut db);
        let dqv = bundle.qv_increment(p, k);
        for i in 0..d {
            let drift: f64 = (0..d).map(|j| dqv.get(i, j) * etas[k * d + j]).sum();
            next[i] = x[i] + db[i] + drift;
        }
    }
}

/// `B^eta_{k+1} = B^eta_k + dB_k + d<B>_k eta(t_k, B^eta_k)`; quadratic variation unchanged.
pub fn drift_shift(bundle: &PathBundle, eta: &DriftControl) -> Result<PathBundle> {
    if eta.dim() != bundle.dim {
        return Err(Error::Dimension {
            expected: bundle.dim,
            got: eta.dim(),
        });
    }
    let d = bundle.dim;
    let n = bundle.grid.n_steps();
    let paths: Vec<Vec<f64>> = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut shifted = vec![0.0; (n + 1) * d];
            let mut etas = vec![0.0; n * d];
            shift_path(bundle, eta, p, &mut shifted, &mut etas);
            shifted
        })
        .collect();
    Ok(PathBundle {
        b: paths.concat(),
        ..bundle.clone()
    })
}

/// Per-path `H_T^G(eta) = 1/2 sum_k (eta_k, d<B>_k eta_k)` along the shifted recursion.
pub fn h_functional(eta: &DriftControl, bundle: &PathBundle) -> Result<Vec<f64>> {
    Ok(eta_integrals(eta, bundle)?
        .into_iter()
        .map(|(_, h)| h)
        .collect())
}

/// Per-path `(int eta dB, H_T^G(eta))` with left-point sums.
pub fn eta_integrals(eta: &DriftControl, bundle: &PathBundle) -> Result<Vec<(f64, f64)>> {
    if eta.dim() != bundle.dim {
        return Err(Error::Dimension {
            expected: bundle.dim,
            got: eta.dim(),
        });
    }
    let d = bundle.dim;
    let n = bundle.grid.n_steps();
    Ok((0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut shifted = vec![0.0; (n + 1) * d];
            let mut etas = vec![0.0; n * d];
            shift_path(bundle, eta, p, &mut shifted, &mut etas);
            let mut db = vec![0.0; d];
            let (mut stoch, mut h) = (0.0, 0.0);
            for k in 0..n {
                let e = &etas[k * d..(k + 1) * d];
                bundle.increment(p, k, &mut db);
                stoch += e.iter().zip(&db).map(|(a, b)| a * b).sum::<f64>();
                h += 0.5 * bundle.qv_increment(p, k).quad(e);
            }
            (stoch, h)
        })
        .collect())
}

/// Per-path `log E_T^eta = int eta dB - H_T^G(eta)`.
pub fn log_girsanov_density(eta: &DriftControl, bundle: &PathBundle) -> Result<Vec<f64>> {
    Ok(eta_integrals(eta, bundle)?
        .into_iter()
        .map(|(s, h)| s - h)
        .collect())
}

/// Per-path Girsanov density `E_T^eta`, computed through its logarithm.
pub fn girsanov_density(eta: &DriftControl, bundle: &PathBundle) -> Result<Vec<f64>> {
    if !eta.bound().is_finite() {
        return Err(Error::Argument(
            "girsanov density needs a bounded drift".into(),
        ));
    }
    Ok(log_girsanov_density(eta, bundle)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Symmetric-matrix process `eta(path, k, B_{t_k})` used by [`compensator_path`].
pub type SymProcess<'a> = dyn Fn(usize, usize, &[f64]) -> SymMatrix + Sync + 'a;

/// Per-path `M_{t_k} = sum_{j<k} [2 G(eta_j) dt - (eta_j, d<B>_j)]` (`n + 1` values per path).
pub fn compensator_path(
    set: &UncertaintySet,
    eta_sym: &SymProcess<'_>,
    bundle: &PathBundle,
) -> Result<Vec<Vec<f64>>> {
    let n = bundle.grid.n_steps();
    let dt = bundle.grid.dt();
    (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut m = Vec::with_capacity(n + 1);
            m.push(0.0);
            let mut acc = 0.0;
            for k in 0..n {
                let e = eta_sym(p, k, bundle.state(p, k));
                acc += 2.0 * g_eval(&e, set)? * dt - e.inner(&bundle.qv_increment(p, k));
                m.push(acc);
            }
            Ok(m)
        })
        .collect()
}

//! Flow coefficients, the skeleton ODE, its frozen-coefficient Euler version and the
//! small-noise flow SDE.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rate::SkeletonPair;
use crate::error::{Error, Result};
use crate::model::{TimeGrid, UncertaintySet};
use crate::paths::{packed_index, ControlPolicy, PathScratch, Simulator};

/// Coefficients `b: R^p -> R^p`, `sigma: R^p -> R^{p x d}`, `h: R^p -> (R^{d x d})^p`.
pub trait Coefficients: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `p x d`.
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    /// `p` blocks of row-major symmetric `d x d` matrices.
    fn qv_drift(&self, x: &[f64], out: &mut [f64]);
}

/// `b = -rate x`, `sigma = vol I`, `h_i = qv e_i e_i^T` (state and noise dimension equal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFlow {
    pub dim: usize,
    pub rate: f64,
    pub vol: f64,
    pub qv: f64,
}

impl Coefficients for LinearFlow {
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.rate * v;
        }
    }
    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = self.vol;
        }
    }
    fn qv_drift(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let d = self.dim;
        for i in 0..d {
            out[i * d * d + i * d + i] = self.qv;
        }
    }
}

/// Scalar nonlinear flow `b = -sin x`, `sigma = 1 + cos(x) / 2`, `h = sin(x) / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SineFlow;

impl Coefficients for SineFlow {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0].sin();
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 + 0.5 * x[0].cos();
    }
    fn qv_drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.25 * x[0].sin();
    }
}

/// Vector field writing into its output slice.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Coefficients given by closures.
#[derive(Clone)]
pub struct FnCoefficients {
    pub p: usize,
    pub d: usize,
    pub b: FieldFn,
    pub sigma: FieldFn,
    pub h: FieldFn,
}

impl Coefficients for FnCoefficients {
    fn state_dim(&self) -> usize {
        self.p
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.b)(x, out)
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }
    fn qv_drift(&self, x: &[f64], out: &mut [f64]) {
        (self.h)(x, out)
    }
}

/// Perturbed coefficients indexed by the noise scale.
pub type CoefficientFamily = Arc<dyn Fn(f64) -> Arc<dyn Coefficients> + Send + Sync>;

/// Coefficients with a declared Lipschitz constant, noise scale and optional perturbed
/// family `eps -> (b^eps, sigma^eps, h^eps)`.
#[derive(Clone)]
pub struct FlowSpec {
    pub name: String,
    pub coefficients: Arc<dyn Coefficients>,
    pub lipschitz: f64,
    pub eps: f64,
    pub family: Option<CoefficientFamily>,
}

impl fmt::Debug for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowSpec")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("eps", &self.eps)
            .field("family", &self.family.is_some())
            .finish()
    }
}

impl FlowSpec {
    pub fn new(
        name: impl Into<String>,
        coefficients: Arc<dyn Coefficients>,
        lipschitz: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Argument(format!(
                "noise scale must be >= 0, got {eps}"
            )));
        }
        Ok(Self {
            name: name.into(),
            coefficients,
            lipschitz,
            eps,
            family: None,
        })
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps,
            ..self.clone()
        }
    }

    pub fn with_family(mut self, family: CoefficientFamily) -> Self {
        self.family = Some(family);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.coefficients.state_dim()
    }
    pub fn noise_dim(&self) -> usize {
        self.coefficients.noise_dim()
    }

    /// Coefficients used at the current noise scale.
    pub fn active(&self) -> Arc<dyn Coefficients> {
        match &self.family {
            Some(f) if self.eps > 0.0 => f(self.eps),
            _ => self.coefficients.clone(),
        }
    }

    /// Largest sampled Lipschitz quotient of `(b, sigma, h)` on `[-radius, radius]^p`.
    pub fn sampled_lipschitz(&self, samples: usize, radius: f64, seed: u64) -> f64 {
        let c = &self.coefficients;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = c.state_dim();
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-radius..=radius)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..=0.5)).collect();
            let dist = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                continue;
            }
            worst = worst.max(coefficient_distance(c.as_ref(), &x, c.as_ref(), &y) / dist);
        }
        worst
    }

    /// Sup distance between the perturbed and limit coefficients on sampled points, per
    /// noise scale in `eps_list` (empty without a family).
    pub fn family_distances(
        &self,
        eps_list: &[f64],
        samples: usize,
        radius: f64,
        seed: u64,
    ) -> Vec<f64> {
        let Some(family) = &self.family else {
            return Vec::new();
        };
        let p = self.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..samples)
            .map(|_| (0..p).map(|_| rng.random_range(-radius..=radius)).collect())
            .collect();
        eps_list
            .iter()
            .map(|&e| {
                let pert = family(e);
                points
                    .iter()
                    .map(|x| coefficient_distance(pert.as_ref(), x, self.coefficients.as_ref(), x))
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

fn coefficient_distance(a: &dyn Coefficients, x: &[f64], b: &dyn Coefficients, y: &[f64]) -> f64 {
    let p = a.state_dim();
    let d = a.noise_dim();
    let mut u = vec![0.0; p * d * d];
    let mut v = vec![0.0; p * d * d];
    let mut acc = 0.0;
    for (n, which) in [(p, 0), (p * d, 1), (p * d * d, 2)] {
        let (u, v) = (&mut u[..n], &mut v[..n]);
        match which {
            0 => {
                a.drift(x, u);
                b.drift(y, v)
            }
            1 => {
                a.diffusion(x, u);
                b.diffusion(y, v)
            }
            _ => {
                a.qv_drift(x, u);
                b.qv_drift(y, v)
            }
        }
        acc += u
            .iter()
            .zip(v.iter())
            .map(|(s, t)| (s - t) * (s - t))
            .sum::<f64>();
    }
    acc.sqrt()
}

/// Values of a deterministic flow at grid times: `[x0][step 0..=n][state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowValues {
    pub p: usize,
    pub n_steps: usize,
    pub values: Vec<Vec<f64>>,
}

impl FlowValues {
    pub fn at(&self, i: usize, k: usize) -> &[f64] {
        &self.values[i][k * self.p..(k + 1) * self.p]
    }

    /// `max_{x0, k} |self - other|` at common grid times (`other` may be on a grid refined
    /// by an integer factor).
    pub fn sup_distance(&self, other: &FlowValues) -> f64 {
        let ratio = other.n_steps / self.n_steps;
        let mut worst = 0.0_f64;
        for i in 0..self.values.len() {
            for k in 0..=self.n_steps {
                let a = self.at(i, k);
                let b = other.at(i, k * ratio);
                for (u, v) in a.iter().zip(b) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
        worst
    }
}

struct Workspace {
    b: Vec<f64>,
    s: Vec<f64>,
    h: Vec<f64>,
}

impl Workspace {
    fn new(p: usize, d: usize) -> Self {
        Self {
            b: vec![0.0; p],
            s: vec![0.0; p * d],
            h: vec![0.0; p * d * d],
        }
    }
}

/// `b(x) dt + sigma(x) df + (h(x), dg)` written into `out` (add mode).
fn add_increment(
    c: &dyn Coefficients,
    w: &mut Workspace,
    x: &[f64],
    dt: f64,
    df: &[f64],
    dg: &[f64],
    out: &mut [f64],
) {
    let p = c.state_dim();
    let d = c.noise_dim();
    c.drift(x, &mut w.b);
    c.diffusion(x, &mut w.s);
    c.qv_drift(x, &mut w.h);
    for i in 0..p {
        let mut v = w.b[i] * dt;
        for j in 0..d {
            v += w.s[i * d + j] * df[j];
        }
        let hi = &w.h[i * d * d..(i + 1) * d * d];
        for a in 0..d {
            for b in 0..d {
                v += hi[a * d + b] * dg[packed_index(d, a, b)];
            }
        }
        out[i] += v;
    }
}

fn check_finite(x0: &[f64], x: &[f64], t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { x0: x0.to_vec(), t })
    }
}

fn check_dims(spec: &FlowSpec, pair: &SkeletonPair, x0s: &[Vec<f64>]) -> Result<()> {
    if pair.dim() != spec.noise_dim() {
        return Err(Error::Dimension {
            expected: spec.noise_dim(),
            got: pair.dim(),
        });
    }
    for x in x0s {
        if x.len() != spec.state_dim() {
            return Err(Error::Dimension {
                expected: spec.state_dim(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// `Psi(f, g)(x, t)`: `dx = b dt + sigma f' dt + (h, g') dt`, classical RK4 per grid step
/// (`f'` and `g'` are constant on each step).
pub fn skeleton_ode(spec: &FlowSpec, pair: &SkeletonPair, x0s: &[Vec<f64>]) -> Result<FlowValues> {
    check_dims(spec, pair, x0s)?;
    let c = spec.coefficients.as_ref();
    let p = c.state_dim();
    let d = c.noise_dim();
    let grid = pair.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut w = Workspace::new(p, d);
    let mut values = Vec::with_capacity(x0s.len());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut tmp = vec![0.0; p];
    let mut df = vec![0.0; d];
    let mut dg = vec![0.0; d * (d + 1) / 2];
    for x0 in x0s {
        let mut out = Vec::with_capacity((n + 1) * p);
        out.extend_from_slice(x0);
        let mut x = x0.clone();
        for k in 0..n {
            for (o, v) in df.iter_mut().zip(pair.f_dot(k)) {
                *o = v * dt;
            }
            for (o, v) in dg.iter_mut().zip(pair.g_dot(k).packed_values()) {
                *o = v * dt;
            }
            let stage = |w: &mut Workspace,
                         base: &[f64],
                         kin: Option<(&[f64], f64)>,
                         tmp: &mut Vec<f64>,
                         kout: &mut Vec<f64>| {
                match kin {
                    Some((kp, a)) => {
                        for i in 0..p {
                            tmp[i] = base[i] + a * kp[i];
                        }
                    }
                    None => tmp.copy_from_slice(base),
                }
                kout.fill(0.0);
                add_increment(c, w, tmp, dt, &df, &dg, kout);
            };
            stage(&mut w, &x, None, &mut tmp, &mut k1);
            stage(&mut w, &x, Some((&k1, 0.5)), &mut tmp, &mut k2);
            stage(&mut w, &x, Some((&k2, 0.5)), &mut tmp, &mut k3);
            stage(&mut w, &x, Some((&k3, 1.0)), &mut tmp, &mut k4);
            for i in 0..p {
                x[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
            }
            check_finite(x0, &x, grid.time(k + 1))?;
            out.extend_from_slice(&x);
        }
        values.push(out);
    }
    Ok(FlowValues {
        p,
        n_steps: n,
        values,
    })
}

/// `Psi^(N)(f, g)`: on each of `n_pieces` equal pieces the coefficients are frozen at the
/// left endpoint and `f`, `g` enter through their exact increments. Reported on the
/// pair's grid.
pub fn skeleton_euler(
    spec: &FlowSpec,
    pair: &SkeletonPair,
    x0s: &[Vec<f64>],
    n_pieces: usize,
) -> Result<FlowValues> {
    check_dims(spec, pair, x0s)?;
    if n_pieces == 0 {
        return Err(Error::Argument(
            "Euler skeleton needs at least one piece".into(),
        ));
    }
    let c = spec.coefficients.as_ref();
    let p = c.state_dim();
    let d = c.noise_dim();
    let grid = pair.grid();
    let n = grid.n_steps();
    let horizon = grid.horizon();
    let piece = horizon / n_pieces as f64;
    let mut w = Workspace::new(p, d);
    let mut values = Vec::with_capacity(x0s.len());
    let mut f0 = vec![0.0; d];
    let mut f1 = vec![0.0; d];
    let mut df = vec![0.0; d];
    let m = d * (d + 1) / 2;
    let mut g0 = vec![0.0; m];
    let mut g1 = vec![0.0; m];
    let mut dg = vec![0.0; m];
    let mut inc = vec![0.0; p];
    for x0 in x0s {
        let mut out = Vec::with_capacity((n + 1) * p);
        out.extend_from_slice(x0);
        let mut anchor = x0.clone();
        let mut piece_idx = 0usize;
        for k in 1..=n {
            let t = grid.time(k);
            // advance the anchor over every piece that ends before t
            while piece_idx + 1 < n_pieces && (piece_idx + 1) as f64 * piece < t - 1e-12 * horizon {
                let (s0, s1) = (piece_idx as f64 * piece, (piece_idx + 1) as f64 * piece);
                frozen_step(
                    c,
                    &mut w,
                    &anchor,
                    pair,
                    s0,
                    s1,
                    (&mut f0, &mut f1, &mut df),
                    (&mut g0, &mut g1, &mut dg),
                    &mut inc,
                );
                for i in 0..p {
                    anchor[i] += inc[i];
                }
                check_finite(x0, &anchor, s1)?;
                piece_idx += 1;
            }
            let s0 = piece_idx as f64 * piece;
            frozen_step(
                c,
                &mut w,
                &anchor,
                pair,
                s0,
                t,
                (&mut f0, &mut f1, &mut df),
                (&mut g0, &mut g1, &mut dg),
                &mut inc,
            );
            let x: Vec<f64> = anchor.iter().zip(&inc).map(|(a, b)| a + b).collect();
            check_finite(x0, &x, t)?;
            out.extend_from_slice(&x);
        }
        values.push(out);
    }
    Ok(FlowValues {
        p,
        n_steps: n,
        values,
    })
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn frozen_step(
    c: &dyn Coefficients,
    w: &mut Workspace,
    anchor: &[f64],
    pair: &SkeletonPair,
    s0: f64,
    s1: f64,
    f: (&mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>),
    g: (&mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>),
    inc: &mut [f64],
) {
    let (f0, f1, df) = f;
    let (g0, g1, dg) = g;
    pair.f_at(s0, f0);
    pair.f_at(s1, f1);
    pair.g_at(s0, g0);
    pair.g_at(s1, g1);
    for i in 0..df.len() {
        df[i] = f1[i] - f0[i];
    }
    for i in 0..dg.len() {
        dg[i] = g1[i] - g0[i];
    }
    inc.fill(0.0);
    add_increment(c, w, anchor, s1 - s0, df, dg, inc);
}

/// One simulated flow path per initial point, `[x0][step 0..=n][state]`, together with the
/// driving quadratic variation.
pub struct FlowSample<'a> {
    pub p: usize,
    pub n_steps: usize,
    pub x: &'a [Vec<f64>],
    pub scratch: &'a PathScratch,
}

impl FlowSample<'_> {
    pub fn at(&self, i: usize, k: usize) -> &[f64] {
        &self.x[i][k * self.p..(k + 1) * self.p]
    }
}

/// Euler-Maruyama for `dX = b dt + sqrt(eps) sigma dB + (h, d<B>)` along one simulated
/// `(B, <B>)` path, for every initial point.
fn flow_along(
    c: &dyn Coefficients,
    eps: f64,
    grid: &TimeGrid,
    s: &PathScratch,
    x0s: &[Vec<f64>],
    w: &mut Workspace,
    out: &mut [Vec<f64>],
) -> Result<()> {
    let p = c.state_dim();
    let d = c.noise_dim();
    let m = d * (d + 1) / 2;
    let n = grid.n_steps();
    let dt = grid.dt();
    let se = eps.sqrt();
    let mut db = vec![0.0; d];
    let mut dqv = vec![0.0; m];
    for (x0, xs) in x0s.iter().zip(out.iter_mut()) {
        xs[..p].copy_from_slice(x0);
        for k in 0..n {
            for j in 0..d {
                db[j] = se * (s.b[(k + 1) * d + j] - s.b[k * d + j]);
            }
            for q in 0..m {
                dqv[q] = s.qv[(k + 1) * m + q] - s.qv[k * m + q];
            }
            let (prev, next) = xs.split_at_mut((k + 1) * p);
            let x = &prev[k * p..];
            next[..p].copy_from_slice(x);
            add_increment(c, w, x, dt, &db, &dqv, &mut next[..p]);
            if !next[..p].iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    x0: x0.clone(),
                    t: grid.time(k + 1),
                });
            }
        }
    }
    Ok(())
}

/// Runs the flow on every path and maps each sample through `f` (paths in parallel,
/// results in path order).
#[allow(clippy::too_many_arguments)]
pub fn gsde_map<T, F>(
    spec: &FlowSpec,
    set: &UncertaintySet,
    grid: &TimeGrid,
    policy: &ControlPolicy,
    x0s: &[Vec<f64>],
    n_paths: usize,
    seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &FlowSample<'_>) -> T + Sync + Send,
{
    if set.dim() != spec.noise_dim() {
        return Err(Error::Dimension {
            expected: spec.noise_dim(),
            got: set.dim(),
        });
    }
    for x in x0s {
        if x.len() != spec.state_dim() {
            return Err(Error::Dimension {
                expected: spec.state_dim(),
                got: x.len(),
            });
        }
    }
    let c = spec.active();
    let p = c.state_dim();
    let d = c.noise_dim();
    let n = grid.n_steps();
    let sim = Simulator::new(set, grid, policy, None, seed)?;
    use rayon::prelude::*;
    (0..n_paths)
        .into_par_iter()
        .map_init(
            || {
                (
                    sim.scratch(),
                    Workspace::new(p, d),
                    vec![vec![0.0; (n + 1) * p]; x0s.len()],
                )
            },
            |(s, w, xs), path| {
                sim.run(path, s)?;
                flow_along(c.as_ref(), spec.eps, grid, s, x0s, w, xs)?;
                Ok(f(
                    path,
                    &FlowSample {
                        p,
                        n_steps: n,
                        x: xs,
                        scratch: s,
                    },
                ))
            },
        )
        .collect()
}

/// Stored flow paths `[path][x0][step 0..=n][state]`.
#[derive(Debug, Clone)]
pub struct FlowPaths {
    pub p: usize,
    pub n_steps: usize,
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl FlowPaths {
    pub fn at(&self, path: usize, i: usize, k: usize) -> &[f64] {
        &self.paths[path][i][k * self.p..(k + 1) * self.p]
    }
}

/// Euler-Maruyama flow paths for every initial point under `policy`.
pub fn gsde_solve(
    spec: &FlowSpec,
    set: &UncertaintySet,
    grid: &TimeGrid,
    policy: &ControlPolicy,
    x0s: &[Vec<f64>],
    n_paths: usize,
    seed: u64,
) -> Result<FlowPaths> {
    let paths = gsde_map(spec, set, grid, policy, x0s, n_paths, seed, |_, s| {
        s.x.to_vec()
    })?;
    Ok(FlowPaths {
        p: spec.state_dim(),
        n_steps: grid.n_steps(),
        paths,
    })
}

/// Moment estimate of `E|X(x, T) - X(y, T)|^2 / |x - y|^2` per policy.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RegularityReport {
    pub policy: String,
    pub mean_sq_distance: f64,
    pub se: f64,
    pub constant: f64,
}

/// Estimates the quadratic flow-regularity constant at time `grid.horizon()` for the pair
/// of initial points `x`, `y`.
#[allow(clippy::too_many_arguments)]
pub fn flow_regularity(
    spec: &FlowSpec,
    set: &UncertaintySet,
    grid: &TimeGrid,
    policies: &[ControlPolicy],
    x: &[f64],
    y: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<RegularityReport>> {
    let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if dist2 == 0.0 {
        return Err(Error::Argument("initial points must differ".into()));
    }
    let x0s = vec![x.to_vec(), y.to_vec()];
    let n = grid.n_steps();
    policies
        .iter()
        .map(|pol| {
            let sq = gsde_map(spec, set, grid, pol, &x0s, n_paths, seed, |_, s| {
                s.at(0, n)
                    .iter()
                    .zip(s.at(1, n))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })?;
            let est = crate::stats::Estimate::from_samples(&sq);
            Ok(RegularityReport {
                policy: pol.name().to_string(),
                mean_sq_distance: est.mean,
                se: est.se,
                constant: est.mean / dist2,
            })
        })
        .collect()
}

/// Random skeleton pairs on `grid`: `f'` piecewise constant on `blocks` pieces with
/// `|f|_H = h_norm`, and `g'` cycling through the lower corner, the upper corner and a
/// random piecewise-constant path in the box.
pub fn sample_pairs(
    set: &UncertaintySet,
    grid: &TimeGrid,
    count: usize,
    blocks: usize,
    h_norm: f64,
    seed: u64,
) -> Result<Vec<SkeletonPair>> {
    let d = set.dim();
    let n = grid.n_steps();
    let blocks = blocks.clamp(1, n);
    let (lo, hi) = (set.sigma_lo2(), set.sigma_hi2());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let raw: Vec<Vec<f64>> = (0..blocks)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let sq: f64 = raw.iter().flatten().map(|v| v * v).sum::<f64>() / blocks as f64;
            let scale = h_norm / (sq * grid.horizon()).sqrt().max(1e-300);
            let levels: Vec<Vec<f64>> = match i % 3 {
                0 => vec![vec![lo; d]; blocks],
                1 => vec![vec![hi; d]; blocks],
                _ => (0..blocks)
                    .map(|_| (0..d).map(|_| rng.random_range(lo..=hi)).collect())
                    .collect(),
            };
            let f = (0..n)
                .map(|k| raw[k * blocks / n].iter().map(|v| v * scale).collect())
                .collect();
            let g = (0..n)
                .map(|k| crate::model::SymMatrix::from_diag(&levels[k * blocks / n]))
                .collect();
            SkeletonPair::new(grid.clone(), f, g)
        })
        .collect()
}

/// Sup-distance between the Euler skeleton with `n` pieces and the skeleton ODE, maximised
/// over `pairs` and `x0s`, for each `n` in `pieces`.
pub fn euler_convergence(
    spec: &FlowSpec,
    pairs: &[SkeletonPair],
    x0s: &[Vec<f64>],
    pieces: &[usize],
) -> Result<Vec<(usize, f64)>> {
    use rayon::prelude::*;
    let exact: Vec<FlowValues> = pairs
        .par_iter()
        .map(|p| skeleton_ode(spec, p, x0s))
        .collect::<Result<_>>()?;
    pieces
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = pairs
                .par_iter()
                .zip(&exact)
                .map(|(p, e)| Ok(skeleton_euler(spec, p, x0s, n)?.sup_distance(e)))
                .collect::<Result<_>>()?;
            Ok((n, errs.into_iter().fold(0.0, f64::max)))
        })
        .collect()
}

//! Skeleton pairs, the action functional `J` and the rate function `I` by penalised
//! projected-gradient minimisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::flow::{skeleton_ode, FlowSpec};
use super::optimize::{minimize, OptOptions};
use crate::error::{Error, Result};
use crate::model::{SymMatrix, TimeGrid, UncertaintySet};

/// Absolutely continuous pair `(f, g)` with `f(0) = 0`, `g(0) = 0` and step derivatives
/// constant on each grid interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPair {
    grid: TimeGrid,
    dim: usize,
    f_dot: Vec<Vec<f64>>,
    g_dot: Vec<SymMatrix>,
    f_nodes: Vec<Vec<f64>>,
    g_nodes: Vec<Vec<f64>>,
}

impl SkeletonPair {
    pub fn new(grid: TimeGrid, f_dot: Vec<Vec<f64>>, g_dot: Vec<SymMatrix>) -> Result<Self> {
        let n = grid.n_steps();
        if f_dot.len() != n || g_dot.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: f_dot.len().min(g_dot.len()),
            });
        }
        let dim = f_dot[0].len();
        if f_dot.iter().any(|v| v.len() != dim) || g_dot.iter().any(|m| m.dim() != dim) {
            return Err(Error::Argument("inconsistent skeleton dimensions".into()));
        }
        let dt = grid.dt();
        let m = dim * (dim + 1) / 2;
        let mut f_nodes = vec![vec![0.0; dim]];
        let mut g_nodes = vec![vec![0.0; m]];
        for k in 0..n {
            let f: Vec<f64> = f_nodes[k]
                .iter()
                .zip(&f_dot[k])
                .map(|(a, b)| a + b * dt)
                .collect();
            let g: Vec<f64> = g_nodes[k]
                .iter()
                .zip(g_dot[k].packed_values())
                .map(|(a, b)| a + b * dt)
                .collect();
            f_nodes.push(f);
            g_nodes.push(g);
        }
        Ok(Self {
            grid,
            dim,
            f_dot,
            g_dot,
            f_nodes,
            g_nodes,
        })
    }

    /// `f = 0` and `g' = s I`.
    pub fn zero(grid: TimeGrid, dim: usize, s: f64) -> Self {
        let n = grid.n_steps();
        let g = SymMatrix::from_diag(&vec![s; dim]);
        Self::new(grid, vec![vec![0.0; dim]; n], vec![g; n]).expect("consistent")
    }

    /// Constant derivatives `f' = f`, `g' = diag(g)`.
    pub fn constant(grid: TimeGrid, f: &[f64], g: &[f64]) -> Result<Self> {
        let n = grid.n_steps();
        Self::new(grid, vec![f.to_vec(); n], vec![SymMatrix::from_diag(g); n])
    }

    /// Builds from flat parameters `[f' (n d) | diag g' (n d)]`.
    pub fn from_params(grid: &TimeGrid, dim: usize, params: &[f64]) -> Result<Self> {
        let n = grid.n_steps();
        let f = (0..n)
            .map(|k| params[k * dim..(k + 1) * dim].to_vec())
            .collect();
        let off = n * dim;
        let g = (0..n)
            .map(|k| SymMatrix::from_diag(&params[off + k * dim..off + (k + 1) * dim]))
            .collect();
        Self::new(grid.clone(), f, g)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn f_dot(&self, k: usize) -> &[f64] {
        &self.f_dot[k]
    }
    pub fn g_dot(&self, k: usize) -> &SymMatrix {
        &self.g_dot[k]
    }
    /// `f(t_k)`.
    pub fn f_node(&self, k: usize) -> &[f64] {
        &self.f_nodes[k]
    }

    /// `|f|_H^2 = sum |f'|^2 dt`.
    pub fn h_norm2(&self) -> f64 {
        let dt = self.grid.dt();
        self.f_dot
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>() * dt)
            .sum()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        let k = ((t / dt).floor().max(0.0) as usize).min(n - 1);
        (k, t - self.grid.time(k))
    }

    /// `f(t)` by exact piecewise-linear interpolation.
    pub fn f_at(&self, t: f64, out: &mut [f64]) {
        let (k, s) = self.locate(t);
        for i in 0..self.dim {
            out[i] = self.f_nodes[k][i] + self.f_dot[k][i] * s;
        }
    }

    /// Packed `g(t)` by exact piecewise-linear interpolation.
    pub fn g_at(&self, t: f64, out: &mut [f64]) {
        let (k, s) = self.locate(t);
        for (i, v) in self.g_dot[k].packed_values().iter().enumerate() {
            out[i] = self.g_nodes[k][i] + v * s;
        }
    }

    /// Same pair on a grid with each step split into `factor` substeps.
    pub fn refined(&self, factor: usize) -> Self {
        let n = self.grid.n_steps();
        let grid = TimeGrid::new(self.grid.horizon(), n * factor).expect("valid grid");
        let f = (0..n * factor)
            .map(|k| self.f_dot[k / factor].clone())
            .collect();
        let g = (0..n * factor)
            .map(|k| self.g_dot[k / factor].clone())
            .collect();
        Self::new(grid, f, g).expect("consistent")
    }

    /// `c f` with the same `g`.
    pub fn scaled_f(&self, c: f64) -> Self {
        let f = self
            .f_dot
            .iter()
            .map(|v| v.iter().map(|x| c * x).collect())
            .collect();
        Self::new(self.grid.clone(), f, self.g_dot.clone()).expect("consistent")
    }
}

/// `J(f, g) = 1/2 sum_k (f'_k, (g'_k)^{-1} f'_k) dt`, or `+inf` when some `g'_k` leaves
/// `Sigma`.
pub fn rate_j(pair: &SkeletonPair, set: &UncertaintySet) -> f64 {
    if pair.dim() != set.dim() {
        return f64::INFINITY;
    }
    let dt = pair.grid().dt();
    let mut acc = 0.0;
    for k in 0..pair.grid().n_steps() {
        let g = pair.g_dot(k);
        if !set.contains(g) {
            return f64::INFINITY;
        }
        for (i, f) in pair.f_dot(k).iter().enumerate() {
            acc += f * f / g.get(i, i);
        }
    }
    0.5 * acc * dt
}

/// Map from skeleton pairs to paths.
#[derive(Debug, Clone)]
pub enum SkeletonMap {
    /// `Psi(f, g) = f`.
    Integral,
    /// Skeleton ODE started at `x0`.
    Flow { spec: FlowSpec, x0: Vec<f64> },
}

impl SkeletonMap {
    pub fn output_dim(&self, noise_dim: usize) -> usize {
        match self {
            SkeletonMap::Integral => noise_dim,
            SkeletonMap::Flow { spec, .. } => spec.state_dim(),
        }
    }

    /// Path values at grid times, `[step 0..=n][state]`.
    pub fn apply(&self, pair: &SkeletonPair) -> Result<Vec<f64>> {
        match self {
            SkeletonMap::Integral => Ok(pair.f_nodes.concat()),
            SkeletonMap::Flow { spec, x0 } => {
                Ok(skeleton_ode(spec, pair, std::slice::from_ref(x0))?
                    .values
                    .remove(0))
            }
        }
    }
}

/// Constraint on the image `Psi(f, g)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RateTarget {
    /// Whole path at grid times, `[step 0..=n][state]`.
    Path(Vec<f64>),
    /// State at the horizon.
    Terminal(Vec<f64>),
}

impl RateTarget {
    /// `y(t) = y0 + slope t` on `grid`.
    pub fn linear(grid: &TimeGrid, y0: &[f64], slope: &[f64]) -> Self {
        let v = grid
            .times()
            .iter()
            .flat_map(|t| y0.iter().zip(slope).map(move |(a, b)| a + b * t))
            .collect();
        RateTarget::Path(v)
    }

    /// Squared distance: `sum_k |psi_k - y_k|^2 dt` for paths, `|psi_T - y|^2` otherwise.
    fn distance2(&self, psi: &[f64], p: usize, dt: f64) -> f64 {
        match self {
            RateTarget::Path(y) => {
                let n = y.len() / p;
                (1..n)
                    .map(|k| {
                        (0..p)
                            .map(|i| (psi[k * p + i] - y[k * p + i]).powi(2))
                            .sum::<f64>()
                            * dt
                    })
                    .sum()
            }
            RateTarget::Terminal(y) => {
                let last = &psi[psi.len() - p..];
                last.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
            }
        }
    }
}

/// Optimiser settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateOptions {
    pub starts: usize,
    pub penalties: Vec<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Largest accepted `sqrt(distance^2)` at the final penalty.
    pub feasibility_tol: f64,
    pub seed: u64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            penalties: vec![1e1, 1e2, 1e3, 1e4, 1e5],
            max_iter: 4000,
            grad_tol: 1e-6,
            feasibility_tol: 1e-2,
            seed: 0,
        }
    }
}

/// One optimiser start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartRecord {
    pub value: f64,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    /// `J(argmin)`.
    pub value: f64,
    pub argmin: SkeletonPair,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// `sqrt` of the squared distance between `Psi(argmin)` and the target.
    pub residual: f64,
    pub starts: Vec<StartRecord>,
}

/// `I(y) = inf { J(f, g) : Psi(f, g) = y }`, approximated by minimising
/// `J + mu dist^2` with `mu` increasing through `opts.penalties`.
pub fn rate_i(
    target: &RateTarget,
    map: &SkeletonMap,
    set: &UncertaintySet,
    grid: &TimeGrid,
    opts: &RateOptions,
) -> Result<RateResult> {
    let d = set.dim();
    let n = grid.n_steps();
    let p = map.output_dim(d);
    if let SkeletonMap::Flow { spec, x0 } = map {
        if spec.noise_dim() != d || x0.len() != p {
            return Err(Error::Dimension {
                expected: d,
                got: spec.noise_dim(),
            });
        }
    }
    match target {
        RateTarget::Path(y) if y.len() != (n + 1) * p => {
            return Err(Error::Dimension {
                expected: (n + 1) * p,
                got: y.len(),
            })
        }
        RateTarget::Terminal(y) if y.len() != p => {
            return Err(Error::Dimension {
                expected: p,
                got: y.len(),
            })
        }
        _ => {}
    }
    if opts.starts == 0 || opts.penalties.is_empty() {
        return Err(Error::Argument(
            "rate optimiser needs starts and penalties".into(),
        ));
    }
    let dt = grid.dt();
    let n_params = 2 * n * d;
    let mut lo = vec![f64::NEG_INFINITY; n_params];
    let mut hi = vec![f64::INFINITY; n_params];
    for i in n * d..n_params {
        lo[i] = set.sigma_lo2();
        hi[i] = set.sigma_hi2();
    }
    let warm = warm_start(target, map, set, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let initial: Vec<Vec<f64>> = (0..opts.starts)
        .map(|s| {
            let mut x = warm.clone();
            if s > 0 {
                let scale = 1.0 + warm[..n * d].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                for v in x[..n * d].iter_mut() {
                    *v += 0.3 * scale * rng.random_range(-1.0..1.0);
                }
                for v in x[n * d..].iter_mut() {
                    *v = rng.random_range(set.sigma_lo2()..=set.sigma_hi2());
                }
            } else {
                for v in x[n * d..].iter_mut() {
                    *v = 0.5 * (set.sigma_lo2() + set.sigma_hi2());
                }
            }
            x
        })
        .collect();

    let evaluate = |x: &[f64]| -> (f64, f64) {
        let pair = match SkeletonPair::from_params(grid, d, x) {
            Ok(p) => p,
            Err(_) => return (f64::INFINITY, f64::INFINITY),
        };
        let j = rate_j(&pair, set);
        let dist2 = match map.apply(&pair) {
            Ok(psi) => target.distance2(&psi, p, dt),
            Err(_) => f64::INFINITY,
        };
        (j, dist2)
    };

    let runs: Vec<(StartRecord, Vec<f64>)> = initial
        .par_iter()
        .map(|x0| {
            let mut x = x0.clone();
            let mut iterations = 0;
            let mut last = None;
            for &mu in &opts.penalties {
                let obj = |x: &[f64]| {
                    let (j, d2) = evaluate(x);
                    j + mu * d2
                };
                let out = minimize(
                    &obj,
                    &x,
                    &lo,
                    &hi,
                    &OptOptions {
                        max_iter: opts.max_iter,
                        grad_tol: opts.grad_tol,
                        grad_scale: 1.0 / dt,
                        fd_step: 1e-6,
                    },
                );
                iterations += out.iterations;
                x = out.x.clone();
                last = Some(out);
            }
            let out = last.expect("at least one penalty");
            let (j, d2) = evaluate(&x);
            let residual = d2.sqrt();
            let rec = StartRecord {
                value: j,
                objective: out.value,
                residual,
                iterations,
                grad_norm: out.grad_norm,
                converged: out.converged && residual <= opts.feasibility_tol,
            };
            (rec, x)
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let key = |r: &StartRecord| (!r.converged, r.objective);
            let (ka, kb) = (key(&a.1 .0), key(&b.1 .0));
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i)
        .expect("at least one start");
    let (rec, x) = &runs[best];
    Ok(RateResult {
        value: rec.value,
        argmin: SkeletonPair::from_params(grid, d, x)?,
        iterations: runs.iter().map(|r| r.0.iterations).sum(),
        converged: rec.converged,
        grad_norm: rec.grad_norm,
        residual: rec.residual,
        starts: runs.into_iter().map(|r| r.0).collect(),
    })
}

/// `f' = y'` for the integral map; for flows `f'` solves `sigma f' = y' - b - (h, g')`
/// in the least-squares sense with `g' = hi`.
fn warm_start(
    target: &RateTarget,
    map: &SkeletonMap,
    set: &UncertaintySet,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let d = set.dim();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut x = vec![0.0; 2 * n * d];
    for v in x[n * d..].iter_mut() {
        *v = set.sigma_hi2();
    }
    let p = map.output_dim(d);
    let path: Vec<f64> = match target {
        RateTarget::Path(y) => y.clone(),
        RateTarget::Terminal(y) => {
            let start = match map {
                SkeletonMap::Integral => vec![0.0; p],
                SkeletonMap::Flow { x0, .. } => x0.clone(),
            };
            grid.times()
                .iter()
                .flat_map(|t| {
                    let s = t / grid.horizon();
                    start.iter().zip(y).map(move |(a, b)| a + s * (b - a))
                })
                .collect()
        }
    };
    match map {
        SkeletonMap::Integral => {
            for k in 0..n {
                for i in 0..d {
                    x[k * d + i] = (path[(k + 1) * d + i] - path[k * d + i]) / dt;
                }
            }
        }
        SkeletonMap::Flow { spec, .. } => {
            let c = spec.coefficients.clone();
            let mut b = vec![0.0; p];
            let mut s = vec![0.0; p * d];
            let mut h = vec![0.0; p * d * d];
            for k in 0..n {
                let y = &path[k * p..(k + 1) * p];
                c.drift(y, &mut b);
                c.diffusion(y, &mut s);
                c.qv_drift(y, &mut h);
                let rhs: Vec<f64> = (0..p)
                    .map(|i| {
                        let hg: f64 = (0..d)
                            .map(|a| h[i * d * d + a * d + a] * set.sigma_hi2())
                            .sum();
                        (path[(k + 1) * p + i] - y[i]) / dt - b[i] - hg
                    })
                    .collect();
                let f = least_squares_solve(&s, p, d, &rhs);
                x[k * d..(k + 1) * d].copy_from_slice(&f);
            }
        }
    }
    Ok(x)
}

/// Minimum-norm least squares for `A f = r` with `A` (`p x d`) via the normal equations
/// with a small ridge.
fn least_squares_solve(a: &[f64], p: usize, d: usize, r: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    let mut v = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..p).map(|k| a[k * d + i] * a[k * d + j]).sum();
        }
        v[i] = (0..p).map(|k| a[k * d + i] * r[k]).sum();
        m[i * d + i] += 1e-10;
    }
    // Gaussian elimination with partial pivoting
    for c in 0..d {
        let piv = (c..d)
            .max_by(|&x, &y| m[x * d + c].abs().partial_cmp(&m[y * d + c].abs()).unwrap())
            .unwrap();
        if piv != c {
            for j in 0..d {
                m.swap(c * d + j, piv * d + j);
            }
            v.swap(c, piv);
        }
        let diag = m[c * d + c];
        for row in c + 1..d {
            let factor = m[row * d + c] / diag;
            for j in c..d {
                m[row * d + j] -= factor * m[c * d + j];
            }
            v[row] -= factor * v[c];
        }
    }
    let mut out = vec![0.0; d];
    for c in (0..d).rev() {
        let s: f64 = (c + 1..d).map(|j| m[c * d + j] * out[j]).sum();
        out[c] = (v[c] - s) / m[c * d + c];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::flow::{Coefficients, LinearFlow, SineFlow};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn set() -> UncertaintySet {
        UncertaintySet::scalar(0.25, 1.0).unwrap()
    }

    #[test]
    fn zero_f_has_zero_cost() {
        let pair = SkeletonPair::zero(TimeGrid::new(2.0, 10).unwrap(), 1, 0.5);
        assert_eq!(rate_j(&pair, &set()), 0.0);
    }

    #[test]
    fn constant_pair_closed_form() {
        let g = TimeGrid::new(2.0, 10).unwrap();
        let pair = SkeletonPair::constant(g, &[1.5], &[0.5]).unwrap();
        assert!((rate_j(&pair, &set()) - 1.5 * 1.5 * 2.0 / (2.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn leaving_the_set_costs_infinity() {
        let g = TimeGrid::new(1.0, 5).unwrap();
        let mut gd = vec![SymMatrix::scalar(1.0); 5];
        gd[2] = SymMatrix::scalar(2.0);
        let pair = SkeletonPair::new(g, vec![vec![0.1]; 5], gd).unwrap();
        assert_eq!(rate_j(&pair, &set()), f64::INFINITY);
        let g = TimeGrid::new(1.0, 5).unwrap();
        let pair = SkeletonPair::constant(g, &[0.1], &[1.0 + 5e-10]).unwrap();
        assert!(rate_j(&pair, &set()).is_finite());
    }

    #[test]
    fn interpolation_is_exact() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let pair = SkeletonPair::new(
            g,
            vec![vec![1.0], vec![-2.0], vec![0.5], vec![3.0]],
            vec![SymMatrix::scalar(0.5); 4],
        )
        .unwrap();
        let mut f = [0.0];
        pair.f_at(0.375, &mut f);
        assert!((f[0] - (0.25 - 2.0 * 0.125)).abs() < 1e-15);
        pair.f_at(1.0, &mut f);
        assert!((f[0] - pair.f_node(4)[0]).abs() < 1e-15);
        let mut gv = [0.0];
        pair.g_at(0.6, &mut gv);
        assert!((gv[0] - 0.3).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn j_is_nonnegative_and_quadratic(
            f in proptest::collection::vec(-3.0..3.0f64, 8),
            g in proptest::collection::vec(0.25..1.0f64, 8),
            c in -4.0..4.0f64,
        ) {
            let grid = TimeGrid::new(1.0, 8).unwrap();
            let pair = SkeletonPair::new(
                grid,
                f.iter().map(|v| vec![*v]).collect(),
                g.iter().map(|v| SymMatrix::scalar(*v)).collect(),
            ).unwrap();
            let j = rate_j(&pair, &set());
            prop_assert!(j >= 0.0);
            let jc = rate_j(&pair.scaled_f(c), &set());
            prop_assert!((jc - c * c * j).abs() <= 1e-12 * (1.0 + jc.abs()));
        }
    }

    #[test]
    fn integral_map_linear_target() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let target = RateTarget::linear(&grid, &[0.0], &[1.0]);
        let r = rate_i(
            &target,
            &SkeletonMap::Integral,
            &set(),
            &grid,
            &RateOptions::default(),
        )
        .unwrap();
        assert!(r.converged, "{:?}", r.starts);
        assert!((r.value - 0.5).abs() < 5e-3, "{}", r.value);
        assert_eq!(r.starts.len(), 8);
    }

    #[test]
    fn rate_never_exceeds_a_feasible_pair() {
        let grid = TimeGrid::new(1.0, 12).unwrap();
        let spec = FlowSpec::new("sine", Arc::new(SineFlow), 2.0, 0.0).unwrap();
        let f: Vec<Vec<f64>> = (0..12).map(|k| vec![0.5 + 0.1 * k as f64]).collect();
        let g = (0..12)
            .map(|k| SymMatrix::scalar(if k < 6 { 0.5 } else { 0.9 }))
            .collect();
        let pair = SkeletonPair::new(grid.clone(), f, g).unwrap();
        let map = SkeletonMap::Flow {
            spec,
            x0: vec![0.2],
        };
        let psi = map.apply(&pair).unwrap();
        let opts = RateOptions {
            starts: 3,
            ..Default::default()
        };
        let r = rate_i(&RateTarget::Path(psi), &map, &set(), &grid, &opts).unwrap();
        assert!(
            r.value <= rate_j(&pair, &set()) + 1e-3,
            "{} vs {}",
            r.value,
            rate_j(&pair, &set())
        );
    }

    #[test]
    fn unreachable_target_is_flagged() {
        let frozen = LinearFlow {
            dim: 1,
            rate: 0.0,
            vol: 0.0,
            qv: 0.0,
        };
        assert_eq!(frozen.noise_dim(), 1);
        let spec = FlowSpec::new("frozen", Arc::new(frozen), 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let map = SkeletonMap::Flow {
            spec,
            x0: vec![0.0],
        };
        let opts = RateOptions {
            starts: 2,
            ..Default::default()
        };
        let r = rate_i(
            &RateTarget::linear(&grid, &[0.0], &[1.0]),
            &map,
            &set(),
            &grid,
            &opts,
        )
        .unwrap();
        assert!(!r.converged);
        assert!(r.residual > 0.1);
    }
}

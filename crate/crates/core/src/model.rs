//! Uncertainty sets, the sublinear generator `G`, time grids and cylinder functionals.
//!
//! Convention: `sigma_lo2` and `sigma_hi2` bound the *covariance* entries of the
//! admissible volatility matrices, so the set of covariances is
//! `{ diag(s_1, .., s_d) : sigma_lo2 <= s_i <= sigma_hi2 }` and
//! `G(A) = 1/2 sup_{s in Sigma} (A, s)` has the closed form
//! `1/2 sum_i (sigma_hi2 * a_ii^+ - sigma_lo2 * a_ii^-)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real symmetric `d x d` matrix stored by its upper triangle.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect();
        f.debug_tuple("SymMatrix").field(&rows).finish()
    }
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_diag(&[v])
    }

    /// Builds from a dense row-major matrix, symmetrising `(a + a^T) / 2`.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: dense.len(),
            });
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, 0.5 * (dense[i * dim + j] + dense[j * dim + i]));
            }
        }
        Ok(m)
    }

    /// `theta * theta^T` for a dense row-major `theta`.
    pub fn outer_square(dim: usize, theta: &[f64]) -> Self {
        let mut m = Self::zeros(dim);
        outer_square_packed(dim, theta, &mut m.upper);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.packed(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.packed(i, j);
        self.upper[k] = v;
    }

    #[inline]
    fn packed(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row i of the upper triangle starts after sum_{r<i} (dim - r) entries
        i * (2 * self.dim - i + 1) / 2 + (j - i)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn packed_values(&self) -> &[f64] {
        &self.upper
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        debug_assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &SymMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &SymMatrix, scale: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += scale * b;
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|a| a * s).collect(),
        }
    }

    /// Frobenius inner product `(A, B) = sum_ij a_ij b_ij`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let p = self.get(i, j) * other.get(i, j);
                s += if i == j { p } else { 2.0 * p };
            }
        }
        s
    }

    /// Quadratic form `v^T A v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += v[i] * self.get(i, j) * v[j];
            }
        }
        s
    }

    /// `A v`.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.get(i, j) * v[j]).sum();
        }
    }

    /// Outer product `v v^T`.
    pub fn outer(v: &[f64]) -> SymMatrix {
        let d = v.len();
        let mut m = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                m.set(i, j, v[i] * v[j]);
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }
}

/// Shape of the covariance uncertainty set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    #[serde(rename = "scalar")]
    Scalar1D,
    DiagonalBox,
}

/// The covariance uncertainty set `Sigma`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySet {
    dim: usize,
    sigma_lo2: f64,
    sigma_hi2: f64,
    structure: Structure,
}

/// Absolute slack when testing membership of a covariance in `Sigma`.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

impl UncertaintySet {
    pub fn new(dim: usize, sigma_lo2: f64, sigma_hi2: f64, structure: Structure) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("dimension must be positive".into()));
        }
        if !(sigma_lo2.is_finite() && sigma_hi2.is_finite()) || sigma_lo2 <= 0.0 {
            return Err(Error::Argument(format!(
                "need 0 < sigma_lo2 <= sigma_hi2 < inf, got ({sigma_lo2}, {sigma_hi2})"
            )));
        }
        if sigma_hi2 < sigma_lo2 {
            return Err(Error::Argument(format!(
                "sigma_hi2 = {sigma_hi2} below sigma_lo2 = {sigma_lo2}"
            )));
        }
        if structure == Structure::Scalar1D && dim != 1 {
            return Err(Error::Argument("scalar structure requires dim = 1".into()));
        }
        Ok(Self {
            dim,
            sigma_lo2,
            sigma_hi2,
            structure,
        })
    }

    pub fn scalar(sigma_lo2: f64, sigma_hi2: f64) -> Result<Self> {
        Self::new(1, sigma_lo2, sigma_hi2, Structure::Scalar1D)
    }

    pub fn diagonal_box(dim: usize, sigma_lo2: f64, sigma_hi2: f64) -> Result<Self> {
        Self::new(dim, sigma_lo2, sigma_hi2, Structure::DiagonalBox)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn sigma_lo2(&self) -> f64 {
        self.sigma_lo2
    }
    pub fn sigma_hi2(&self) -> f64 {
        self.sigma_hi2
    }
    pub fn structure(&self) -> Structure {
        self.structure
    }

    /// Whether a covariance matrix lies in `Sigma` up to [`MEMBERSHIP_TOL`] (scaled).
    pub fn contains(&self, sigma: &SymMatrix) -> bool {
        self.contains_scaled(sigma, 1.0)
    }

    /// Whether `sigma` lies in `scale * Sigma`.
    pub fn contains_scaled(&self, sigma: &SymMatrix, scale: f64) -> bool {
        sigma.dim() == self.dim && self.contains_packed(sigma.packed_values(), scale)
    }

    /// Membership of a packed upper triangle in `scale * Sigma`.
    pub fn contains_packed(&self, packed: &[f64], scale: f64) -> bool {
        let tol = MEMBERSHIP_TOL * scale.max(1e-300) * self.sigma_hi2.max(1.0);
        let mut k = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = packed[k];
                k += 1;
                if i == j {
                    if !(v >= self.sigma_lo2 * scale - tol && v <= self.sigma_hi2 * scale + tol) {
                        return false;
                    }
                } else if !(v.abs() <= tol) {
                    return false;
                }
            }
        }
        true
    }

    /// Euclidean projection of a diagonal vector onto the box.
    pub fn project_diag(&self, diag: &mut [f64]) {
        for v in diag {
            *v = v.clamp(self.sigma_lo2, self.sigma_hi2);
        }
    }
}

/// Packed upper triangle of `theta * theta^T` written into `out`.
#[inline]
pub fn outer_square_packed(dim: usize, theta: &[f64], out: &mut [f64]) {
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            out[k] = (0..dim)
                .map(|c| theta[i * dim + c] * theta[j * dim + c])
                .sum();
            k += 1;
        }
    }
}

/// `G(A) = 1/2 sup_{s in Sigma} (A, s)`.
pub fn g_eval(a: &SymMatrix, set: &UncertaintySet) -> Result<f64> {
    if a.dim() != set.dim() {
        return Err(Error::Dimension {
            expected: set.dim(),
            got: a.dim(),
        });
    }
    Ok(g_diag(&a.diag(), set))
}

/// `G` evaluated from the diagonal of `A` alone (off-diagonal entries do not enter for a
/// diagonal uncertainty set).
#[inline]
pub fn g_diag(diag: &[f64], set: &UncertaintySet) -> f64 {
    0.5 * diag
        .iter()
        .map(|&a| g_scalar(a, set.sigma_lo2, set.sigma_hi2))
        .sum::<f64>()
}

#[inline]
pub(crate) fn g_scalar(a: f64, lo: f64, hi: f64) -> f64 {
    if a >= 0.0 {
        hi * a
    } else {
        lo * a
    }
}

/// The `2^d` corners of the covariance box.
pub fn extreme_points(set: &UncertaintySet) -> Vec<SymMatrix> {
    let d = set.dim();
    (0..1usize << d)
        .map(|mask| {
            let diag: Vec<f64> = (0..d)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        set.sigma_hi2
                    } else {
                        set.sigma_lo2
                    }
                })
                .collect();
            SymMatrix::from_diag(&diag)
        })
        .collect()
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Argument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Argument("n_steps must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n_steps as f64
        }
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid time nearest to `t`, and whether `t` was exactly on the grid.
    pub fn snap(&self, t: f64) -> (usize, bool) {
        let x = t / self.dt();
        let k = x.round().clamp(0.0, self.n_steps as f64) as usize;
        let exact = (self.time(k) - t).abs() <= 1e-9 * self.horizon;
        (k, exact)
    }
}

pub type PhiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `Phi = phi(B_{t_1}, .., B_{t_n})` with declared sup-norm and Lipschitz constant.
///
/// `phi` receives the observations flattened as `[x_1 (d values), .., x_n (d values)]`.
#[derive(Clone)]
pub struct CylinderFunctional {
    times: Vec<f64>,
    dim: usize,
    phi: PhiFn,
    bound: f64,
    lipschitz: f64,
    label: String,
}

impl fmt::Debug for CylinderFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylinderFunctional")
            .field("label", &self.label)
            .field("times", &self.times)
            .field("dim", &self.dim)
            .field("bound", &self.bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl CylinderFunctional {
    pub fn new(
        label: impl Into<String>,
        times: Vec<f64>,
        dim: usize,
        phi: PhiFn,
        bound: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Argument(
                "cylinder functional needs at least one time".into(),
            ));
        }
        if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument(format!(
                "observation times must be increasing in (0, T], got {times:?}"
            )));
        }
        if dim == 0 {
            return Err(Error::Argument("dimension must be positive".into()));
        }
        Ok(Self {
            times,
            dim,
            phi,
            bound,
            lipschitz,
            label: label.into(),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn n_legs(&self) -> usize {
        self.times.len()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn bound(&self) -> f64 {
        self.bound
    }
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, xs: &[f64]) -> f64 {
        (self.phi)(xs)
    }

    pub fn phi(&self) -> &PhiFn {
        &self.phi
    }

    /// Same functional shifted by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let phi = self.phi.clone();
        Self {
            times: self.times.clone(),
            dim: self.dim,
            phi: Arc::new(move |x| phi(x) + c),
            bound: self.bound + c.abs(),
            lipschitz: self.lipschitz,
            label: format!("{}{:+}", self.label, c),
        }
    }

    /// Same functional with observation times replaced (used when snapping to a grid).
    pub fn with_times(&self, times: Vec<f64>) -> Result<Self> {
        if times.len() != self.times.len() {
            return Err(Error::Dimension {
                expected: self.times.len(),
                got: times.len(),
            });
        }
        Self::new(
            self.label.clone(),
            times,
            self.dim,
            self.phi.clone(),
            self.bound,
            self.lipschitz,
        )
    }

    /// Spot-checks the declared bound and Lipschitz constant on random samples drawn from
    /// the box `[-radius, radius]^{n d}`. Returns the number of violated samples.
    pub fn spot_check<R: Rng>(&self, rng: &mut R, samples: usize, radius: f64) -> usize {
        let n = self.times.len() * self.dim;
        let mut violations = 0;
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        for _ in 0..samples {
            for (a, b) in y.iter_mut().zip(z.iter_mut()) {
                *a = rng.random_range(-radius..=radius);
                *b = *a + rng.random_range(-0.1..=0.1);
            }
            let fy = self.eval(&y);
            let fz = self.eval(&z);
            let dist = y
                .iter()
                .zip(&z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let slack = 1e-9 * (1.0 + self.bound);
            if fy.abs() > self.bound + slack || (fy - fz).abs() > self.lipschitz * dist + slack {
                violations += 1;
            }
        }
        violations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sym<R: Rng>(rng: &mut R, d: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                m.set(i, j, rng.random_range(-3.0..3.0));
            }
        }
        m
    }

    /// Brute-force `1/2 sup (A, s)` over a grid of diagonal covariances.
    fn brute_g(a: &SymMatrix, set: &UncertaintySet, per_axis: usize) -> f64 {
        let d = a.dim();
        let lo = set.sigma_lo2();
        let hi = set.sigma_hi2();
        let node = |k: usize| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64;
        let mut best = f64::NEG_INFINITY;
        let total = per_axis.pow(d as u32);
        for flat in 0..total {
            let mut r = flat;
            let mut s = 0.0;
            for i in 0..d {
                s += a.get(i, i) * node(r % per_axis);
                r /= per_axis;
            }
            best = best.max(0.5 * s);
        }
        best
    }

    #[test]
    fn packed_storage_roundtrip() {
        let mut m = SymMatrix::zeros(3);
        let mut v = 1.0;
        for i in 0..3 {
            for j in i..3 {
                m.set(i, j, v);
                v += 1.0;
            }
        }
        assert_eq!(m.packed_values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.get(2, 0), 3.0);
        assert_eq!(m.get(1, 2), 5.0);
    }

    #[test]
    fn g_of_zero_is_zero() {
        let set = UncertaintySet::diagonal_box(3, 0.5, 2.0).unwrap();
        assert_eq!(g_eval(&SymMatrix::zeros(3), &set).unwrap(), 0.0);
    }

    #[test]
    fn scalar_values_match_brute_force_grid() {
        let set = UncertaintySet::scalar(1.0, 4.0).unwrap();
        // brute force over 10^4 points of [1, 4]
        let brute = |a: f64| {
            (0..10_000)
                .map(|k| 0.5 * a * (1.0 + 3.0 * k as f64 / 9_999.0))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        assert!((brute(1.0) - 2.0).abs() < 1e-12);
        assert!((brute(-1.0) + 0.5).abs() < 1e-12);
        assert_eq!(g_eval(&SymMatrix::scalar(1.0), &set).unwrap(), 2.0);
        assert_eq!(g_eval(&SymMatrix::scalar(-1.0), &set).unwrap(), -0.5);
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let set = UncertaintySet::diagonal_box(2, 1.0, 2.0).unwrap();
        assert!(matches!(
            g_eval(&SymMatrix::zeros(3), &set),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn invalid_sets_are_rejected() {
        assert!(UncertaintySet::scalar(0.0, 1.0).is_err());
        assert!(UncertaintySet::scalar(2.0, 1.0).is_err());
        assert!(UncertaintySet::new(2, 1.0, 2.0, Structure::Scalar1D).is_err());
        assert!(UncertaintySet::scalar(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn extreme_points_are_box_corners() {
        let s1 = UncertaintySet::scalar(1.0, 4.0).unwrap();
        let p: Vec<f64> = extreme_points(&s1).iter().map(|m| m.get(0, 0)).collect();
        assert_eq!(p, vec![1.0, 4.0]);

        let s2 = UncertaintySet::diagonal_box(2, 1.0, 4.0).unwrap();
        let mut corners: Vec<Vec<f64>> = extreme_points(&s2).iter().map(|m| m.diag()).collect();
        corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            corners,
            vec![
                vec![1.0, 1.0],
                vec![1.0, 4.0],
                vec![4.0, 1.0],
                vec![4.0, 4.0]
            ]
        );
        for m in extreme_points(&s2) {
            assert!(s2.contains(&m));
            assert_eq!(m.get(0, 1), 0.0);
        }
    }

    #[test]
    fn extreme_points_attain_g_on_diagonal_matrices() {
        let set = UncertaintySet::diagonal_box(3, 0.3, 1.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = extreme_points(&set);
        for _ in 0..100 {
            let diag: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = SymMatrix::from_diag(&diag);
            let g = g_eval(&a, &set).unwrap();
            let best = pts
                .iter()
                .map(|s| 0.5 * a.inner(s))
                .fold(f64::NEG_INFINITY, f64::max);
            for s in &pts {
                assert!(0.5 * a.inner(s) <= g + 1e-12);
            }
            assert!((best - g).abs() < 1e-12);
        }
    }

    #[test]
    fn g_matches_brute_force_in_low_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=2 {
            let set = UncertaintySet::diagonal_box(d, 0.25, 1.0).unwrap();
            for _ in 0..50 {
                let a = random_sym(&mut rng, d);
                let g = g_eval(&a, &set).unwrap();
                let b = brute_g(&a, &set, 101);
                assert!((g - b).abs() <= 1e-6 * g.abs().max(1.0), "{g} vs {b}");
            }
        }
    }

    #[test]
    fn time_grid_snaps_and_partitions() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(10), 1.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.snap(0.5), (5, true));
        assert!(!g.snap(0.52).1);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn cylinder_spot_check_flags_wrong_constants() {
        let ok = CylinderFunctional::new(
            "min(x^2,4)",
            vec![1.0],
            1,
            Arc::new(|x: &[f64]| (x[0] * x[0]).min(4.0)),
            4.0,
            4.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ok.spot_check(&mut rng, 2000, 5.0), 0);
        let bad = CylinderFunctional::new(
            "x^2 mislabeled",
            vec![1.0],
            1,
            Arc::new(|x: &[f64]| x[0] * x[0]),
            1.0,
            1.0,
        )
        .unwrap();
        assert!(bad.spot_check(&mut rng, 2000, 5.0) > 0);
    }

    #[test]
    fn cylinder_times_must_increase() {
        let phi: PhiFn = Arc::new(|x: &[f64]| x[0]);
        assert!(CylinderFunctional::new("x", vec![0.5, 0.5], 1, phi.clone(), 1.0, 1.0).is_err());
        assert!(CylinderFunctional::new("x", vec![0.0], 1, phi, 1.0, 1.0).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn sym(d: usize) -> impl Strategy<Value = SymMatrix> {
            proptest::collection::vec(-5.0f64..5.0, d * (d + 1) / 2).prop_map(move |v| {
                let mut m = SymMatrix::zeros(d);
                let mut it = v.into_iter();
                for i in 0..d {
                    for j in i..d {
                        m.set(i, j, it.next().unwrap());
                    }
                }
                m
            })
        }

        proptest! {
            #[test]
            fn subadditive(a in sym(3), b in sym(3)) {
                let set = UncertaintySet::diagonal_box(3, 0.25, 1.0).unwrap();
                let lhs = g_eval(&a.add(&b), &set).unwrap();
                let rhs = g_eval(&a, &set).unwrap() + g_eval(&b, &set).unwrap();
                prop_assert!(lhs <= rhs + 1e-12);
            }

            #[test]
            fn positively_homogeneous(a in sym(2), lambda in 0.0f64..10.0) {
                let set = UncertaintySet::diagonal_box(2, 0.5, 2.0).unwrap();
                let g = g_eval(&a, &set).unwrap();
                let gl = g_eval(&a.scale(lambda), &set).unwrap();
                prop_assert!((gl - lambda * g).abs() <= 1e-12 * (1.0 + gl.abs()));
            }

            #[test]
            fn homogeneous_at_two_and_a_half(a in sym(2)) {
                let set = UncertaintySet::diagonal_box(2, 0.5, 2.0).unwrap();
                let g = g_eval(&a, &set).unwrap();
                let gl = g_eval(&a.scale(2.5), &set).unwrap();
                prop_assert!((gl - 2.5 * g).abs() <= 1e-12 * (1.0 + gl.abs()));
            }

            #[test]
            fn monotone_in_psd_order(a in sym(2), v in proptest::collection::vec(-2.0f64..2.0, 2), w in proptest::collection::vec(-2.0f64..2.0, 2)) {
                // A + v v^T + w w^T >= A
                let set = UncertaintySet::diagonal_box(2, 0.25, 1.0).unwrap();
                let bigger = a.add(&SymMatrix::outer(&v)).add(&SymMatrix::outer(&w));
                prop_assert!(g_eval(&bigger, &set).unwrap() >= g_eval(&a, &set).unwrap() - 1e-12);
            }
        }
    }
}

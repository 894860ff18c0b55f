//! Independent reference solvers shared by the integration tests.
#![allow(dead_code)]

/// Discrete-time dynamic programme for a scalar sublinear expectation
/// `sup_sigma E[psi(x + int sigma dW)]`: the variance is chosen per step from `n_sigma`
/// evenly spaced levels in `[lo2, hi2]`, the Gaussian step is integrated by a trapezoid rule
/// on `[-7, 7]`, and values are linearly interpolated on a uniform grid clamped at
/// `+-half_width`. Returns the value at `x = 0`.
#[allow(clippy::too_many_arguments)]
pub fn dp_value(
    psi: &dyn Fn(f64) -> f64,
    lo2: f64,
    hi2: f64,
    horizon: f64,
    steps: usize,
    half_width: f64,
    dx: f64,
    n_sigma: usize,
) -> f64 {
    let n = (2.0 * half_width / dx).round() as usize + 1;
    let xs: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * dx).collect();
    let mut v: Vec<f64> = xs.iter().map(|x| psi(*x)).collect();
    let h = 0.1;
    let zs: Vec<f64> = (-70..=70).map(|i| i as f64 * h).collect();
    let raw: Vec<f64> = zs.iter().map(|z| (-0.5 * z * z).exp()).collect();
    let total: f64 = raw.iter().sum();
    let ws: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let dt = horizon / steps as f64;
    let levels: Vec<f64> = (0..n_sigma)
        .map(|i| lo2 + (hi2 - lo2) * i as f64 / (n_sigma - 1).max(1) as f64)
        .collect();
    let interp = |v: &[f64], x: f64| -> f64 {
        let u = ((x + half_width) / dx).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        let w = u - i as f64;
        v[i] * (1.0 - w) + v[i + 1] * w
    };
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        for (i, x) in xs.iter().enumerate() {
            next[i] = levels
                .iter()
                .map(|s| {
                    let sd = (s * dt).sqrt();
                    zs.iter()
                        .zip(&ws)
                        .map(|(z, w)| w * interp(&v, x + sd * z))
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        std::mem::swap(&mut v, &mut next);
    }
    interp(&v, 0.0)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

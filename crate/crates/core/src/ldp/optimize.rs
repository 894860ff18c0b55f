//! Box-constrained minimisation by spectral projected gradient with central
//! finite-difference gradients and a nonmonotone Armijo search.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptOptions {
    pub max_iter: usize,
    /// Convergence threshold on `grad_scale * |P(x - grad) - x|_inf`.
    pub grad_tol: f64,
    pub grad_scale: f64,
    pub fd_step: f64,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-6,
            grad_scale: 1.0,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Central differences, one-sided where a bound is active.
pub fn fd_gradient(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    step: f64,
    grad: &mut [f64],
) {
    use rayon::prelude::*;
    let fx = f(x);
    grad.par_iter_mut().enumerate().for_each_init(
        || x.to_vec(),
        |y, (i, g)| {
            let h = step * x[i].abs().max(1.0);
            let up = (x[i] + h).min(hi[i]);
            let dn = (x[i] - h).max(lo[i]);
            y[i] = up;
            let fu = if up > x[i] { f(y) } else { fx };
            y[i] = dn;
            let fd = if dn < x[i] { f(y) } else { fx };
            y[i] = x[i];
            *g = if up > dn { (fu - fd) / (up - dn) } else { 0.0 };
        },
    );
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| ((xi - gi).clamp(lo[i], hi[i]) - xi).abs())
        .fold(0.0, f64::max)
}

/// Minimises `f` over the box `[lo, hi]` starting from `x0`.
pub fn minimize(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &OptOptions,
) -> OptOutcome {
    const MEMORY: usize = 10;
    const GAMMA: f64 = 1e-4;
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = f(&x);
    let mut g = vec![0.0; n];
    fd_gradient(f, &x, lo, hi, opts.fd_step, &mut g);
    let mut history = vec![fx];
    let mut alpha = 1.0 / g.iter().fold(1e-12_f64, |m, v| m.max(v.abs()));
    let mut trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut pg = projected_gradient_norm(&x, &g, lo, hi);
    let mut iterations = 0;
    while iterations < opts.max_iter && pg * opts.grad_scale > opts.grad_tol {
        iterations += 1;
        for i in 0..n {
            dir[i] = (x[i] - alpha * g[i]).clamp(lo[i], hi[i]) - x[i];
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            break;
        }
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let mut f_trial;
        loop {
            for i in 0..n {
                trial[i] = x[i] + lambda * dir[i];
            }
            f_trial = f(&trial);
            if f_trial <= f_ref + GAMMA * lambda * slope || lambda < 1e-12 {
                break;
            }
            lambda *= 0.5;
        }
        if !(f_trial <= f_ref + GAMMA * lambda * slope) {
            break;
        }
        fd_gradient(f, &trial, lo, hi, opts.fd_step, &mut g_new);
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..n {
            let s = trial[i] - x[i];
            sy += s * (g_new[i] - g[i]);
            ss += s * s;
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            1e4 * alpha.min(1.0)
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_trial;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
        pg = projected_gradient_norm(&x, &g, lo, hi);
    }
    OptOutcome {
        value: fx,
        converged: pg * opts.grad_scale <= opts.grad_tol,
        x,
        iterations,
        grad_norm: pg * opts.grad_scale,
    }
}

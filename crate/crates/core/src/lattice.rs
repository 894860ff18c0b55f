//! Tensor-product spatial lattices shared by the PDE solver and feedback tables.

use serde::Serialize;

use crate::error::{Error, Result};

/// Uniform axis `lo = x_0 < .. < x_cells = hi`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo < hi) || cells < 2 {
            return Err(Error::Argument(format!(
                "axis needs lo < hi and at least two cells, got [{lo}, {hi}] / {cells}"
            )));
        }
        Ok(Self { lo, hi, cells })
    }

    /// Symmetric axis `[-half_width, half_width]` with spacing at most `dx` and an even
    /// number of cells so that the origin is a node.
    pub fn symmetric(half_width: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0 && half_width > 0.0) {
            return Err(Error::Argument(format!(
                "axis needs positive spacing and width, got dx = {dx}, half width = {half_width}"
            )));
        }
        let half_cells = (half_width / dx).round().max(1.0) as usize;
        Self::new(
            -(half_cells as f64) * dx,
            half_cells as f64 * dx,
            2 * half_cells,
        )
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }
    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }
    pub fn coord(&self, i: usize) -> f64 {
        self.lo + self.dx() * i as f64
    }

    /// Nearest node, clamped to the axis.
    #[inline]
    pub fn nearest(&self, x: f64) -> usize {
        let r = ((x - self.lo) / self.dx()).round();
        if r.is_nan() || r <= 0.0 {
            0
        } else if r >= self.cells as f64 {
            self.cells
        } else {
            r as usize
        }
    }

    /// Cell index and fractional position for linear interpolation, clamped.
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.lo) / self.dx()).clamp(0.0, self.cells as f64);
        let i = (s.floor() as usize).min(self.cells - 1);
        (i, s - i as f64)
    }
}

/// Row-major tensor lattice (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lattice {
    axes: Vec<Axis>,
}

impl Lattice {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Argument("lattice needs at least one axis".into()));
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }
    pub fn dim(&self) -> usize {
        self.axes.len()
    }
    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::nodes).product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for a in (0..self.axes.len().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.axes[a + 1].nodes();
        }
        s
    }

    /// Multi-index of a flat node index.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.axes.len()).rev() {
            let n = self.axes[a].nodes();
            out[a] = flat % n;
            flat /= n;
        }
    }

    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.axes.len()];
        self.unflatten(flat, &mut idx);
        for (a, (o, i)) in out.iter_mut().zip(idx).enumerate() {
            *o = self.axes[a].coord(i);
        }
    }

    #[inline]
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (a, axis) in self.axes.iter().enumerate() {
            flat = flat * axis.nodes() + axis.nearest(x[a]);
        }
        flat
    }

    /// Multilinear interpolation of nodal `values`, clamped at the edges.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.axes.len();
        let strides = self.strides();
        let mut base = 0;
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let (i, w) = self.axes[a].locate(x[a]);
            base += i * strides[a];
            frac[a] = w;
        }
        let mut acc = 0.0;
        for corner in 0..1usize << d {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_axis_has_origin_node() {
        let a = Axis::symmetric(6.0, 0.02).unwrap();
        assert_eq!(a.cells, 600);
        assert!((a.coord(300)).abs() < 1e-12);
        assert!((a.dx() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn nearest_clamps() {
        let a = Axis::new(-1.0, 1.0, 4).unwrap();
        assert_eq!(a.nearest(-5.0), 0);
        assert_eq!(a.nearest(5.0), 4);
        assert_eq!(a.nearest(0.26), 3);
        assert_eq!(a.nearest(f64::NAN), 0);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_data() {
        let l = Lattice::new(vec![
            Axis::new(-1.0, 1.0, 4).unwrap(),
            Axis::new(0.0, 3.0, 3).unwrap(),
        ])
        .unwrap();
        let mut values = vec![0.0; l.len()];
        let mut c = [0.0; 2];
        for (k, v) in values.iter_mut().enumerate() {
            l.coords(k, &mut c);
            *v = 1.0 + 2.0 * c[0] - c[1] + 0.5 * c[0] * c[1];
        }
        let x = [0.3, 1.7];
        let want = 1.0 + 0.6 - 1.7 + 0.5 * 0.3 * 1.7;
        assert!((l.interpolate(&values, &x) - want).abs() < 1e-12);
        assert_eq!(l.nearest(&[1.0, 3.0]), l.len() - 1);
    }
}

//! Cell-centred tensor grids on `[-L, L]^d` and uniform time partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Absorbing,
}

/// Width (in cells) of the band next to the box edge whose mass is monitored.
pub const BOUNDARY_BAND_FRACTION: f64 = 0.05;

/// Uniform cell-centred grid. Node `i` along an axis sits at `-L + (i + 1/2) h`
/// with `h = 2L / n`, so midpoint quadrature integrates constants exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize, boundary: Boundary) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half width must be positive, got {half_width}")));
        }
        if points_per_axis < 2 {
            return Err(Error::InvalidGrid("need at least two points per axis".into()));
        }
        let total = (points_per_axis as f64).powi(dim as i32);
        if total > 1.0e9 {
            return Err(Error::InvalidGrid(format!("{total} nodes is too many")));
        }
        Ok(Self { dim, half_width, points_per_axis, boundary })
    }

    pub fn periodic_1d(half_width: f64, n: usize) -> Result<Self> {
        Self::new(1, half_width, n, Boundary::Periodic)
    }

    pub fn absorbing_1d(half_width: f64, n: usize) -> Result<Self> {
        Self::new(1, half_width, n, Boundary::Absorbing)
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    /// Coordinate of node `i` along any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Flat-index stride of `axis` (row-major, last axis fastest).
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.dim - 1 - axis) as u32)
    }

    /// Index of `flat` along `axis`.
    #[inline]
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.points_per_axis
    }

    pub fn multi_index(&self, flat: usize, out: &mut [usize]) {
        let n = self.points_per_axis;
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % n;
            rest /= n;
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points_per_axis + i)
    }

    /// Position of node `flat`.
    pub fn node(&self, flat: usize, out: &mut [f64]) {
        let n = self.points_per_axis;
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = self.coord(rest % n);
            rest /= n;
        }
    }

    pub fn node_vec(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.node(flat, &mut x);
        x
    }

    /// Neighbour of `flat` shifted by `offset` cells along `axis`; `None` when the
    /// shift leaves an absorbing box.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> Option<usize> {
        let n = self.points_per_axis as isize;
        let i = self.axis_index(flat, axis) as isize;
        let mut j = i + offset;
        if j < 0 || j >= n {
            if self.is_periodic() {
                j = j.rem_euclid(n);
            } else {
                return None;
            }
        }
        let stride = self.stride(axis) as isize;
        Some((flat as isize + (j - i) * stride) as usize)
    }

    /// Midpoint quadrature.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.cell_volume()
    }

    /// Quadrature of a pointwise product.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * self.cell_volume()
    }

    /// `L^p` norm by quadrature; `p = f64::INFINITY` gives the max norm.
    pub fn norm(&self, u: &[f64], p: f64) -> f64 {
        lp_norm(u, p, self.cell_volume())
    }

    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        (0..self.len())
            .map(|k| {
                self.node(k, &mut x);
                f(&x)
            })
            .collect()
    }

    /// Whether node `flat` lies in the outer band used for boundary-mass monitoring.
    pub fn in_boundary_band(&self, flat: usize) -> bool {
        let cut = (1.0 - BOUNDARY_BAND_FRACTION) * self.half_width;
        (0..self.dim).any(|axis| self.coord(self.axis_index(flat, axis)).abs() > cut)
    }

    /// Mass carried by the outer band of the box.
    pub fn boundary_mass(&self, u: &[f64]) -> f64 {
        (0..self.len())
            .filter(|&k| self.in_boundary_band(k))
            .map(|k| u[k].abs())
            .sum::<f64>()
            * self.cell_volume()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() <= self.half_width)
    }

    /// Map a point back into the box (periodic wrap).
    pub fn wrap(&self, x: &mut [f64]) {
        let w = 2.0 * self.half_width;
        for v in x.iter_mut() {
            *v = (*v + self.half_width).rem_euclid(w) - self.half_width;
        }
    }

    /// Cell containing `x`, if any. Periodic grids wrap first.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let h = self.spacing();
        let n = self.points_per_axis;
        let w = 2.0 * self.half_width;
        let mut flat = 0usize;
        for &v in x {
            let mut s = v + self.half_width;
            if self.is_periodic() {
                s = s.rem_euclid(w);
            } else if !(0.0..=w).contains(&s) {
                return None;
            }
            let i = ((s / h).floor() as usize).min(n - 1);
            flat = flat * n + i;
        }
        Some(flat)
    }

    /// A grid with the same box and `factor` times the resolution.
    pub fn refined(&self, factor: usize) -> Self {
        Self { points_per_axis: self.points_per_axis * factor, ..self.clone() }
    }
}

pub(crate) fn lp_norm(u: &[f64], p: f64, weight: f64) -> f64 {
    if p.is_infinite() {
        u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        u.iter().map(|v| v.abs()).sum::<f64>() * weight
    } else if p == 2.0 {
        (u.iter().map(|v| v * v).sum::<f64>() * weight).sqrt()
    } else {
        (u.iter().map(|v| v.abs().powf(p)).sum::<f64>() * weight).powf(1.0 / p)
    }
}

/// Uniform partition `t_k = k T / M` of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        Ok(Self { horizon, steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node nearest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.steps)
    }

    /// Index of the node equal to `t` (within a relative tolerance).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = self.nearest(t);
        if (self.node(k) - t).abs() <= 1e-9 * self.horizon.max(1.0) {
            Ok(k)
        } else {
            Err(Error::Precondition(format!("time {t} is not a node of the time grid")))
        }
    }
}

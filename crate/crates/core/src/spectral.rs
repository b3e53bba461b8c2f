//! Fourier multipliers on periodic grids.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// FFT plans for one periodic grid.
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers `2 pi k / (2L)` in FFT order.
    pub xi: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: &Grid) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(Error::Precondition("spectral operators need a periodic grid".into()));
        }
        let n = grid.points_per_axis;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let base = std::f64::consts::PI / grid.half_width;
        let xi = (0..n)
            .map(|k| {
                let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                base * k
            })
            .collect();
        Ok(Self { grid: grid.clone(), forward, inverse, xi })
    }

    fn is_nyquist(&self, k: usize) -> bool {
        let n = self.grid.points_per_axis;
        n.is_multiple_of(2) && k == n / 2
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let g = &self.grid;
        let n = g.points_per_axis;
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..g.dim {
            let stride = g.stride(axis);
            let outer = g.len() / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    plan.process(&mut line);
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut c, false);
        c
    }

    pub fn inverse(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut c, true);
        let scale = 1.0 / self.grid.len() as f64;
        c.iter().map(|v| v.re * scale).collect()
    }

    /// Multiply the spectrum of `f` by `m(k)`, where `k` holds per-axis FFT indices.
    pub fn apply(&self, f: &[f64], m: impl Fn(&[usize]) -> Complex64) -> Vec<f64> {
        let mut c = self.forward(f);
        let mut idx = vec![0usize; self.grid.dim];
        for (flat, v) in c.iter_mut().enumerate() {
            self.grid.multi_index(flat, &mut idx);
            *v *= m(&idx);
        }
        self.inverse(c)
    }

    fn xi2(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&k| self.xi[k] * self.xi[k]).sum()
    }

    pub fn heat(&self, f: &[f64], alpha: f64) -> Vec<f64> {
        self.apply(f, |idx| Complex64::new((-alpha * self.xi2(idx)).exp(), 0.0))
    }

    /// `d_i f`.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        self.apply(f, |idx| {
            let k = idx[axis];
            if self.is_nyquist(k) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, self.xi[k])
            }
        })
    }

    /// `d_i d_j f`.
    pub fn second_derivative(&self, f: &[f64], i: usize, j: usize) -> Vec<f64> {
        self.apply(f, |idx| {
            if i != j && (self.is_nyquist(idx[i]) || self.is_nyquist(idx[j])) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-self.xi[idx[i]] * self.xi[idx[j]], 0.0)
            }
        })
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.apply(f, |idx| Complex64::new(-self.xi2(idx), 0.0))
    }

    /// Second-order Riesz transform `d_i d_j Laplacian^{-1}`, zero on the constant mode.
    pub fn riesz(&self, f: &[f64], i: usize, j: usize) -> Vec<f64> {
        self.apply(f, |idx| {
            let r2 = self.xi2(idx);
            if r2 == 0.0 || (i != j && (self.is_nyquist(idx[i]) || self.is_nyquist(idx[j]))) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(self.xi[idx[i]] * self.xi[idx[j]] / r2, 0.0)
            }
        })
    }
}

//! Coefficient fields given by values on grid nodes at a list of times.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;

use super::CoefficientField;

/// Node values of `a` (`[time][node][d*d]`) and `b` (`[time][node][d]`),
/// interpolated multilinearly in space and linearly in time.
#[derive(Clone, Debug)]
pub struct SampledCoefficients {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SampledCoefficients {
    pub fn new(grid: Grid, times: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let d = grid.dim;
        let nt = times.len();
        if nt == 0 {
            return Err(Error::InvalidCoefficient("sampled field needs at least one time".into()));
        }
        if a.len() != nt * grid.len() * d * d || b.len() != nt * grid.len() * d {
            return Err(Error::InvalidCoefficient(format!(
                "sampled field arrays have {} and {} entries for {nt} times on {} nodes",
                a.len(),
                b.len(),
                grid.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidCoefficient("sample times must increase".into()));
        }
        Ok(Self { grid, times, a, b })
    }

    fn time_weights(&self, t: f64) -> (usize, usize, f64) {
        let ts = &self.times;
        let n = ts.len();
        if n == 1 || t <= ts[0] {
            return (0, 0, 0.0);
        }
        if t >= ts[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let k = ts.partition_point(|&s| s <= t) - 1;
        let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
        (k, k + 1, w)
    }

    /// Interpolate the per-node block of width `width` in `data` at `(t, x)`.
    fn interpolate(&self, data: &[f64], width: usize, t: f64, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let d = g.dim;
        let n = g.points_per_axis;
        let h = g.spacing();
        let mut lo = [0usize; 8];
        let mut hi = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(d <= 8, "sampled fields support up to 8 dimensions");
        for axis in 0..d {
            let s = (x[axis] + g.half_width) / h - 0.5;
            if g.is_periodic() {
                let f = s.floor();
                let i0 = (f as i64).rem_euclid(n as i64) as usize;
                lo[axis] = i0;
                hi[axis] = (i0 + 1) % n;
                frac[axis] = s - f;
            } else {
                let s = s.clamp(0.0, (n - 1) as f64);
                let i0 = (s.floor() as usize).min(n - 2);
                lo[axis] = i0;
                hi[axis] = i0 + 1;
                frac[axis] = s - i0 as f64;
            }
        }
        let (k0, k1, wt) = self.time_weights(t);
        let stride_t = g.len() * width;
        out[..width].fill(0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for axis in 0..d {
                let up = corner >> (d - 1 - axis) & 1 == 1;
                let i = if up { hi[axis] } else { lo[axis] };
                w *= if up { frac[axis] } else { 1.0 - frac[axis] };
                flat = flat * n + i;
            }
            if w == 0.0 {
                continue;
            }
            let base0 = k0 * stride_t + flat * width;
            let base1 = k1 * stride_t + flat * width;
            for c in 0..width {
                out[c] += w * ((1.0 - wt) * data[base0 + c] + wt * data[base1 + c]);
            }
        }
    }

    pub fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.grid.dim;
        self.interpolate(&self.a, d * d, t, x, out);
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.grid.dim;
        self.interpolate(&self.b, d, t, x, out);
    }

    /// Sample any field on `grid` at `times`.
    pub fn from_field(field: &CoefficientField, grid: &Grid, times: &[f64]) -> Self {
        let d = grid.dim;
        let mut a = vec![0.0; times.len() * grid.len() * d * d];
        let mut b = vec![0.0; times.len() * grid.len() * d];
        let mut x = vec![0.0; d];
        for (k, &t) in times.iter().enumerate() {
            for p in 0..grid.len() {
                grid.node(p, &mut x);
                let ia = (k * grid.len() + p) * d * d;
                let ib = (k * grid.len() + p) * d;
                field.diffusion(t, &x, &mut a[ia..ia + d * d]);
                field.drift(t, &x, &mut b[ib..ib + d]);
            }
        }
        Self { grid: grid.clone(), times: times.to_vec(), a, b }
    }
}

impl CoefficientField {
    /// Field backed by node samples.
    pub fn sampled(name: impl Into<String>, data: SampledCoefficients, lambda: f64) -> Self {
        let data = Arc::new(data);
        let (da, db) = (data.clone(), data.clone());
        let d = data.grid.dim;
        let time_dependent = data.times.len() > 1;
        let mut field = CoefficientField::from_fns(
            name,
            d,
            move |t, x, out| da.diffusion(t, x, out),
            move |t, x, out| db.drift(t, x, out),
        )
        .with_lambda(lambda)
        .time_dependent(time_dependent);
        field.sampled = Some(data);
        field
    }
}

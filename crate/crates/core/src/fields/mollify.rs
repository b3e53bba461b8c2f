//! Mollification of measures and coefficients by convolution with a positive kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpe::DensityCurve;
use crate::grid::Grid;

use super::sampled::SampledCoefficients;
use super::CoefficientField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    /// `rho(x) = c exp(-sqrt(1 + |x|^2))`.
    Exponential,
}

/// Rescaled kernel `rho_eps(x) = eps^-d rho(x / eps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierKernel {
    pub family: KernelFamily,
    pub scale: f64,
    pub dim: usize,
    normalizer: f64,
}

fn gamma_half(k: usize) -> f64 {
    // Gamma(k / 2)
    if k.is_multiple_of(2) {
        (1..k / 2).map(|i| i as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut x = 0.5;
        while x + 1e-9 < k as f64 / 2.0 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

fn exponential_normalizer(d: usize) -> f64 {
    // 1 / (|S^{d-1}| * int_0^inf r^{d-1} exp(-sqrt(1 + r^2)) dr), composite Simpson
    let sphere = 2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d);
    let (upper, m) = (90.0, 90_000usize);
    let h = upper / m as f64;
    let g = |r: f64| r.powi(d as i32 - 1) * (-(1.0 + r * r).sqrt()).exp();
    let mut s = g(0.0) + g(upper);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    1.0 / (sphere * s * h / 3.0)
}

impl MollifierKernel {
    pub fn new(family: KernelFamily, scale: f64, dim: usize) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Precondition(format!("kernel scale must lie in (0, 1], got {scale}")));
        }
        let normalizer = match family {
            KernelFamily::Gaussian => (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0),
            KernelFamily::Exponential => exponential_normalizer(dim),
        };
        Ok(Self { family, scale, dim, normalizer })
    }

    pub fn gaussian(scale: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, scale, dim)
    }

    /// Unscaled profile at `|z|^2`.
    fn base(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => self.normalizer * (-0.5 * r2).exp(),
            KernelFamily::Exponential => self.normalizer * (-(1.0 + r2).sqrt()).exp(),
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let e = self.scale;
        let r2 = x.iter().map(|v| v * v).sum::<f64>() / (e * e);
        self.base(r2) / e.powi(self.dim as i32)
    }

    /// `eps^2 |grad rho_eps| / rho_eps` and `eps^2 |D^2 rho_eps| / rho_eps` at `x`
    /// (operator norm for the Hessian).
    pub fn derivative_ratios(&self, x: &[f64]) -> (f64, f64) {
        let d = self.dim;
        let e = self.scale;
        let z: Vec<f64> = x.iter().map(|v| v / e).collect();
        let r2: f64 = z.iter().map(|v| v * v).sum();
        // derivatives of log rho in z, then scaled back: grad_x = grad_z / e
        let (g, hess): (Vec<f64>, Vec<f64>) = match self.family {
            KernelFamily::Gaussian => {
                let g = z.iter().map(|v| -v).collect::<Vec<_>>();
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] = z[i] * z[j] - if i == j { 1.0 } else { 0.0 };
                    }
                }
                (g, h)
            }
            KernelFamily::Exponential => {
                let s = (1.0 + r2).sqrt();
                let g = z.iter().map(|v| -v / s).collect::<Vec<_>>();
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = z[i] * z[j] / (s * s) - delta / s + z[i] * z[j] / (s * s * s);
                    }
                }
                (g, h)
            }
        };
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() / e;
        let (vals, _) = crate::linalg::symmetric_eigen(&hess, d);
        let h_norm = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())) / (e * e);
        (g_norm * e * e, h_norm * e * e)
    }
}

/// Discrete convolution with a kernel on a grid. Each source node's kernel
/// column is renormalized to unit mass, so total mass is preserved exactly and
/// the map is a Markov operator.
#[derive(Clone, Debug)]
pub struct Convolver {
    grid: Grid,
    /// Kernel values indexed by per-axis offsets in `[-(n-1), n-1]`.
    table: Vec<f64>,
    /// `1 / sum_x rho(x - y)` for each source node `y`.
    column_scale: Vec<f64>,
}

impl Convolver {
    pub fn new(grid: &Grid, kernel: &MollifierKernel) -> Result<Self> {
        if kernel.dim != grid.dim {
            return Err(Error::Precondition("kernel and grid dimensions differ".into()));
        }
        let n = grid.points_per_axis as isize;
        let d = grid.dim;
        let h = grid.spacing();
        let width = (2 * n - 1) as usize;
        let size = width.pow(d as u32);
        let mut table = vec![0.0; size];
        let mut z = vec![0.0; d];
        for (idx, slot) in table.iter_mut().enumerate() {
            let mut rest = idx;
            for axis in (0..d).rev() {
                let mut o = (rest % width) as isize - (n - 1);
                rest /= width;
                if grid.is_periodic() {
                    if o > n / 2 {
                        o -= n;
                    } else if o < -(n / 2) {
                        o += n;
                    }
                }
                z[axis] = o as f64 * h;
            }
            *slot = kernel.density(&z);
        }
        let mut conv = Self { grid: grid.clone(), table, column_scale: vec![1.0; grid.len()] };
        let ones = vec![1.0; grid.len()];
        let sums = conv.apply_transpose_raw(&ones);
        conv.column_scale = sums.iter().map(|s| 1.0 / s).collect();
        Ok(conv)
    }

    #[inline]
    fn offset_index(&self, x: usize, y: usize) -> usize {
        let g = &self.grid;
        let n = g.points_per_axis;
        let width = 2 * n - 1;
        let mut idx = 0usize;
        let (mut rx, mut ry) = (x, y);
        let mut mult = 1usize;
        for _ in 0..g.dim {
            let o = (rx % n) + (n - 1) - (ry % n);
            idx += o * mult;
            mult *= width;
            rx /= n;
            ry /= n;
        }
        idx
    }

    /// `sum_x rho(x - y)` for each `y`, weighted by `v(x)`.
    fn apply_transpose_raw(&self, v: &[f64]) -> Vec<f64> {
        let len = self.grid.len();
        (0..len)
            .into_par_iter()
            .map(|y| (0..len).map(|x| self.table[self.offset_index(x, y)] * v[x]).sum())
            .collect()
    }

    /// Density of `(v dx) * rho`, evaluated at the nodes.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let len = self.grid.len();
        let src: Vec<f64> = v.iter().zip(&self.column_scale).map(|(a, c)| a * c).collect();
        (0..len)
            .into_par_iter()
            .map(|x| {
                let mut s = 0.0;
                for (y, sy) in src.iter().enumerate() {
                    if *sy != 0.0 {
                        s += self.table[self.offset_index(x, y)] * sy;
                    }
                }
                s
            })
            .collect()
    }

    /// Several convolutions sharing one pass over the kernel.
    pub fn apply_many(&self, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let len = self.grid.len();
        let m = vs.len();
        let srcs: Vec<Vec<f64>> =
            vs.iter().map(|v| v.iter().zip(&self.column_scale).map(|(a, c)| a * c).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..len)
            .into_par_iter()
            .map(|x| {
                let mut acc = vec![0.0; m];
                for y in 0..len {
                    let k = self.table[self.offset_index(x, y)];
                    for (a, s) in acc.iter_mut().zip(&srcs) {
                        *a += k * s[y];
                    }
                }
                acc
            })
            .collect();
        (0..m).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
    }
}

/// `int Theta(dmu/dnu) dnu` on the grid, skipping nodes where `nu` vanishes.
pub fn jensen_functional(grid: &Grid, mu: &[f64], nu: &[f64], theta: impl Fn(f64) -> f64) -> f64 {
    mu.iter()
        .zip(nu)
        .filter(|(_, n)| **n > 0.0)
        .map(|(m, n)| n * theta(m / n))
        .sum::<f64>()
        * grid.cell_volume()
}

/// Coefficients `a^rho = ((a nu_t) * rho) / (nu_t * rho)` and `b^rho` likewise, at
/// every time node of `nu`, as a node-sampled field.
pub fn mollify_coefficients(field: &CoefficientField, nu: &DensityCurve, kernel: &MollifierKernel) -> Result<CoefficientField> {
    let grid = &nu.grid;
    let d = grid.dim;
    let conv = Convolver::new(grid, kernel)?;
    let times = nu.timegrid.nodes();
    let len = grid.len();
    let mut a_out = vec![0.0; times.len() * len * d * d];
    let mut b_out = vec![0.0; times.len() * len * d];
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for (k, &t) in times.iter().enumerate() {
        let u = nu.at(k);
        let mut weighted: Vec<Vec<f64>> = vec![vec![0.0; len]; 1 + d * d + d];
        for p in 0..len {
            grid.node(p, &mut x);
            field.diffusion(t, &x, &mut a);
            field.drift(t, &x, &mut b);
            weighted[0][p] = u[p];
            for c in 0..d * d {
                weighted[1 + c][p] = a[c] * u[p];
            }
            for c in 0..d {
                weighted[1 + d * d + c][p] = b[c] * u[p];
            }
        }
        let conv_out = conv.apply_many(&weighted);
        let den = &conv_out[0];
        for p in 0..len {
            if !(den[p] >= 1e-300) {
                return Err(Error::Underflow { node: p, location: grid.node_vec(p), value: den[p] });
            }
            for c in 0..d * d {
                a_out[(k * len + p) * d * d + c] = conv_out[1 + c][p] / den[p];
            }
            for c in 0..d {
                b_out[(k * len + p) * d + c] = conv_out[1 + d * d + c][p] / den[p];
            }
        }
    }
    let data = SampledCoefficients::new(grid.clone(), times, a_out, b_out)?;
    let mut out = CoefficientField::sampled(format!("{}-mollified", field.name), data, field.ellipticity_lambda);
    if let Some(v) = field.declared_norms.get(super::NORM_B) {
        out.declared_norms.insert(super::NORM_B.to_string(), *v);
    }
    Ok(out)
}

//! Radial cut-off functions and smooth maps used by the push-forward approximation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::testfn::TestFunction;

/// Radial cut-off `chi_R(x) = psi(|x| / R)`: equal to 1 on the ball of radius `R`,
/// 0 outside radius `2R`. The profile is piecewise quadratic with `|psi''| = 4`
/// on the transition, so `|grad chi| <= 2/R` and `|D^2 chi| <= 4/R^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffSpec {
    pub radius: f64,
}

impl CutoffSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 1.0 && radius.is_finite()) {
            return Err(Error::Precondition(format!("cut-off radius must be at least 1, got {radius}")));
        }
        Ok(Self { radius })
    }

    /// Profile `psi(s)` and its first two derivatives.
    pub fn profile(s: f64) -> (f64, f64, f64) {
        if s <= 1.0 {
            (1.0, 0.0, 0.0)
        } else if s <= 1.5 {
            let u = s - 1.0;
            (1.0 - 2.0 * u * u, -4.0 * u, -4.0)
        } else if s < 2.0 {
            let u = 2.0 - s;
            (2.0 * u * u, -4.0 * u, 4.0)
        } else {
            (0.0, 0.0, 0.0)
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self::profile(r / self.radius).0
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (_, dp, _) = Self::profile(r / self.radius);
        if dp == 0.0 {
            out.fill(0.0);
            return;
        }
        for (o, xi) in out.iter_mut().zip(x) {
            *o = dp / self.radius * xi / r;
        }
    }

    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (_, dp, ddp) = Self::profile(r / self.radius);
        out.fill(0.0);
        if dp == 0.0 && ddp == 0.0 {
            return;
        }
        let rr = self.radius;
        for i in 0..d {
            for j in 0..d {
                let ninj = x[i] * x[j] / (r * r);
                let delta = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = ddp / (rr * rr) * ninj + dp / (rr * r) * (delta - ninj);
            }
        }
    }

    pub fn to_test_function(&self, dim: usize) -> TestFunction {
        let (c1, c2, c3) = (*self, *self, *self);
        TestFunction::stationary(
            dim,
            move |x| c1.value(x),
            move |x, g| c2.gradient(x, g),
            move |x, h| c3.hessian(x, h),
        )
        .with_support(2.0 * self.radius)
    }

    /// Largest `|grad chi|` and operator norm of `D^2 chi` over the given points.
    pub fn sampled_bounds(&self, points: &[Vec<f64>]) -> (f64, f64) {
        let mut g1 = 0.0f64;
        let mut g2 = 0.0f64;
        for x in points {
            let d = x.len();
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; d * d];
            self.gradient(x, &mut g);
            self.hessian(x, &mut h);
            g1 = g1.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            g2 = g2.max(operator_norm(&h, d));
        }
        (g1, g2)
    }
}

fn operator_norm(h: &[f64], d: usize) -> f64 {
    let (vals, _) = crate::linalg::symmetric_eigen(h, d);
    vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub type MapFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A smooth map `pi: R^d -> R^d` with its Jacobian (`[i*d + j] = d_j pi^i`) and
/// the Hessians of its components (`[(i*d + j)*d + k] = d_j d_k pi^i`).
#[derive(Clone)]
pub struct SmoothMap {
    pub dim: usize,
    map: MapFn,
    jacobian: MapFn,
    hessians: MapFn,
    /// Bound `C` on `|grad pi|` and `|D^2 pi|`.
    pub derivative_bound: f64,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("dim", &self.dim)
            .field("derivative_bound", &self.derivative_bound)
            .finish_non_exhaustive()
    }
}

impl SmoothMap {
    pub fn new(dim: usize, map: MapFn, jacobian: MapFn, hessians: MapFn, derivative_bound: f64) -> Self {
        Self { dim, map, jacobian, hessians, derivative_bound }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(
            dim,
            Arc::new(|x, y| y.copy_from_slice(x)),
            Arc::new(move |_, j| {
                j.fill(0.0);
                for i in 0..dim {
                    j[i * dim + i] = 1.0;
                }
            }),
            Arc::new(|_, h| h.fill(0.0)),
            1.0,
        )
    }

    pub fn constant(c: Vec<f64>) -> Self {
        Self::new(
            c.len(),
            Arc::new(move |_, y| y.copy_from_slice(&c)),
            Arc::new(|_, j| j.fill(0.0)),
            Arc::new(|_, h| h.fill(0.0)),
            0.0,
        )
    }

    /// `pi(x) = x chi_M(x)`: the identity on the ball of radius `M`, bounded outside.
    pub fn truncated_identity(dim: usize, radius: f64) -> Result<Self> {
        let chi = CutoffSpec::new(radius)?;
        let (c1, c2, c3) = (chi, chi, chi);
        Ok(Self::new(
            dim,
            Arc::new(move |x, y| {
                let v = c1.value(x);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = xi * v;
                }
            }),
            Arc::new(move |x, j| {
                let v = c2.value(x);
                let mut g = vec![0.0; dim];
                c2.gradient(x, &mut g);
                for i in 0..dim {
                    for k in 0..dim {
                        j[i * dim + k] = if i == k { v } else { 0.0 } + x[i] * g[k];
                    }
                }
            }),
            Arc::new(move |x, out| {
                let mut g = vec![0.0; dim];
                let mut h = vec![0.0; dim * dim];
                c3.gradient(x, &mut g);
                c3.hessian(x, &mut h);
                for i in 0..dim {
                    for j in 0..dim {
                        for k in 0..dim {
                            let mut v = x[i] * h[j * dim + k];
                            if i == j {
                                v += g[k];
                            }
                            if i == k {
                                v += g[j];
                            }
                            out[(i * dim + j) * dim + k] = v;
                        }
                    }
                }
            }),
            (1.0 + 4.0f64).max(12.0 / radius),
        ))
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.map)(x, out)
    }

    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, out)
    }

    pub fn hessians(&self, x: &[f64], out: &mut [f64]) {
        (self.hessians)(x, out)
    }

    /// Largest Frobenius norms of the Jacobian and of each component Hessian over `points`.
    pub fn sampled_bounds(&self, points: &[Vec<f64>]) -> (f64, f64) {
        let d = self.dim;
        let mut j = vec![0.0; d * d];
        let mut h = vec![0.0; d * d * d];
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        for x in points {
            self.jacobian(x, &mut j);
            self.hessians(x, &mut h);
            for i in 0..d {
                let row = &j[i * d..(i + 1) * d];
                m1 = m1.max(row.iter().map(|v| v * v).sum::<f64>().sqrt());
                let hi = &h[i * d * d..(i + 1) * d * d];
                m2 = m2.max(operator_norm(hi, d));
            }
        }
        (m1, m2)
    }

    /// Fail unless the declared derivative bound holds on `points`.
    pub fn verify_bound(&self, points: &[Vec<f64>]) -> Result<()> {
        let (m1, m2) = self.sampled_bounds(points);
        if m1.max(m2) > self.derivative_bound + 1e-10 {
            return Err(Error::InvalidCoefficient(format!(
                "map derivatives {m1}, {m2} exceed the declared bound {}",
                self.derivative_bound
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radial_samples(d: usize, r_max: f64, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|k| {
                let r = r_max * (k as f64 + 0.5) / count as f64;
                let mut x: Vec<f64> = (0..d).map(|i| ((k * 7 + i * 3) as f64).sin() + 0.1).collect();
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x.iter_mut().for_each(|v| *v *= r / n);
                x
            })
            .collect()
    }

    #[test]
    fn cutoff_bounds_hold() {
        for radius in [1.0, 2.5, 10.0] {
            let chi = CutoffSpec::new(radius).unwrap();
            for d in [1, 2, 3] {
                let pts = radial_samples(d, 2.5 * radius, 4000);
                let (g1, g2) = chi.sampled_bounds(&pts);
                assert!(g1 <= 4.0 / radius + 1e-12);
                assert!(g2 <= 4.0 / (radius * radius) * (1.0 + 1e-12));
                for x in &pts {
                    let v = chi.value(x);
                    assert!((0.0..=1.0).contains(&v));
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r <= radius {
                        assert_eq!(v, 1.0);
                    }
                    if r >= 2.0 * radius {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
        assert!(CutoffSpec::new(0.5).is_err());
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        let chi = CutoffSpec::new(1.5).unwrap().to_test_function(2);
        let pts: Vec<Vec<f64>> = radial_samples(2, 3.2, 50)
            .into_iter()
            .filter(|x| {
                let s = x.iter().map(|v| v * v).sum::<f64>().sqrt() / 1.5;
                [1.0, 1.5, 2.0].iter().all(|k| (s - k).abs() > 0.01)
            })
            .collect();
        chi.check_derivatives(0.0, &pts, 1e-4).unwrap();
    }

    #[test]
    fn truncated_identity_respects_bound() {
        for d in [1, 2] {
            let m = SmoothMap::truncated_identity(d, 2.0).unwrap();
            m.verify_bound(&radial_samples(d, 5.0, 3000)).unwrap();
            let mut y = vec![0.0; d];
            let x = vec![0.7; d];
            m.apply(&x, &mut y);
            assert_eq!(x, y);
        }
    }
}

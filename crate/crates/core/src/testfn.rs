//! Scalar test functions of `(t, x)` with evaluable time derivative, gradient
//! and Hessian.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct TestFunction {
    pub dim: usize,
    value: ScalarFn,
    time_derivative: ScalarFn,
    gradient: VectorFn,
    hessian: VectorFn,
    /// Radius of a ball containing the spatial support, when compact.
    pub support_radius: Option<f64>,
    /// Declared bound on the `C^{1,2}` norm.
    pub norm_c12: Option<f64>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("dim", &self.dim)
            .field("support_radius", &self.support_radius)
            .field("norm_c12", &self.norm_c12)
            .finish_non_exhaustive()
    }
}

const FD_STEP: f64 = 1e-4;

impl TestFunction {
    pub fn new(dim: usize, value: ScalarFn, time_derivative: ScalarFn, gradient: VectorFn, hessian: VectorFn) -> Self {
        Self { dim, value, time_derivative, gradient, hessian, support_radius: None, norm_c12: None }
    }

    /// Time-independent function with closed-form spatial derivatives.
    pub fn stationary<V, G, H>(dim: usize, value: V, gradient: G, hessian: H) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(
            dim,
            Arc::new(move |_, x| value(x)),
            Arc::new(|_, _| 0.0),
            Arc::new(move |_, x, g| gradient(x, g)),
            Arc::new(move |_, x, h| hessian(x, h)),
        )
    }

    /// Derivatives by central differences of `value`.
    pub fn from_value<V>(dim: usize, value: V) -> Self
    where
        V: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        let value: ScalarFn = Arc::new(value);
        let (v1, v2, v3) = (value.clone(), value.clone(), value.clone());
        Self::new(
            dim,
            value,
            Arc::new(move |t, x| (v1(t + FD_STEP, x) - v1(t - FD_STEP, x)) / (2.0 * FD_STEP)),
            Arc::new(move |t, x, g| fd_gradient(&*v2, t, x, g)),
            Arc::new(move |t, x, h| fd_hessian(&*v3, t, x, h)),
        )
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut f = Self::stationary(dim, move |_| c, |_, g| g.fill(0.0), |_, h| h.fill(0.0));
        f.norm_c12 = Some(c.abs());
        f
    }

    /// `f(x) = x_i`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        Self::stationary(
            dim,
            move |x| x[axis],
            move |_, g| {
                g.fill(0.0);
                g[axis] = 1.0;
            },
            |_, h| h.fill(0.0),
        )
    }

    /// `f(x) = |x|^2 / 2`.
    pub fn half_square(dim: usize) -> Self {
        Self::stationary(
            dim,
            |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            |x, g| g.copy_from_slice(x),
            move |_, h| {
                h.fill(0.0);
                for i in 0..dim {
                    h[i * dim + i] = 1.0;
                }
            },
        )
    }

    /// `f(x) = amplitude * exp(-|x - c|^2 / (2 w^2))`.
    pub fn gaussian_bump(center: Vec<f64>, width: f64, amplitude: f64) -> Self {
        let dim = center.len();
        let w2 = width * width;
        let (c1, c2, c3) = (center.clone(), center.clone(), center);
        let val = move |c: &[f64], x: &[f64]| {
            let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
            amplitude * (-0.5 * r2 / w2).exp()
        };
        let mut f = Self::stationary(
            dim,
            move |x| val(&c1, x),
            move |x, g| {
                let e = val(&c2, x);
                for i in 0..dim {
                    g[i] = -(x[i] - c2[i]) / w2 * e;
                }
            },
            move |x, h| {
                let e = val(&c3, x);
                for i in 0..dim {
                    for j in 0..dim {
                        let d = if i == j { 1.0 } else { 0.0 };
                        h[i * dim + j] = ((x[i] - c3[i]) * (x[j] - c3[j]) / (w2 * w2) - d / w2) * e;
                    }
                }
            },
        );
        let w = width.min(1.0);
        f.norm_c12 = Some(amplitude.abs() * (1.0 + 1.0 / w + 1.0 / (w * w)));
        f
    }

    pub fn with_support(mut self, radius: f64) -> Self {
        self.support_radius = Some(radius);
        self
    }

    pub fn with_norm(mut self, norm: f64) -> Self {
        self.norm_c12 = Some(norm);
        self
    }

    #[inline]
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    #[inline]
    pub fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        (self.time_derivative)(t, x)
    }

    #[inline]
    pub fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.gradient)(t, x, out)
    }

    #[inline]
    pub fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.hessian)(t, x, out)
    }

    /// Product `f * g` with derivatives by the product rule.
    pub fn product(&self, other: &TestFunction) -> Self {
        let d = self.dim;
        let (f1, g1) = (self.clone(), other.clone());
        let (f2, g2) = (self.clone(), other.clone());
        let (f3, g3) = (self.clone(), other.clone());
        let (f4, g4) = (self.clone(), other.clone());
        let support = match (self.support_radius, other.support_radius) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let mut p = Self::new(
            d,
            Arc::new(move |t, x| f1.value(t, x) * g1.value(t, x)),
            Arc::new(move |t, x| f2.time_derivative(t, x) * g2.value(t, x) + f2.value(t, x) * g2.time_derivative(t, x)),
            Arc::new(move |t, x, out| {
                let mut gf = vec![0.0; d];
                let mut gg = vec![0.0; d];
                f3.gradient(t, x, &mut gf);
                g3.gradient(t, x, &mut gg);
                let (vf, vg) = (f3.value(t, x), g3.value(t, x));
                for i in 0..d {
                    out[i] = gf[i] * vg + vf * gg[i];
                }
            }),
            Arc::new(move |t, x, out| {
                let mut gf = vec![0.0; d];
                let mut gg = vec![0.0; d];
                let mut hf = vec![0.0; d * d];
                let mut hg = vec![0.0; d * d];
                f4.gradient(t, x, &mut gf);
                g4.gradient(t, x, &mut gg);
                f4.hessian(t, x, &mut hf);
                g4.hessian(t, x, &mut hg);
                let (vf, vg) = (f4.value(t, x), g4.value(t, x));
                for i in 0..d {
                    for j in 0..d {
                        let k = i * d + j;
                        out[k] = hf[k] * vg + vf * hg[k] + gf[i] * gg[j] + gf[j] * gg[i];
                    }
                }
            }),
        );
        p.support_radius = support;
        p
    }

    /// Compare declared derivatives against central differences at `points`;
    /// returns the largest discrepancy.
    pub fn derivative_discrepancy(&self, t: f64, points: &[Vec<f64>]) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        let v = |s: f64, y: &[f64]| self.value(s, y);
        let mut g = vec![0.0; d];
        let mut gfd = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let mut hfd = vec![0.0; d * d];
        for x in points {
            self.gradient(t, x, &mut g);
            self.hessian(t, x, &mut h);
            fd_gradient(&v, t, x, &mut gfd);
            fd_hessian(&v, t, x, &mut hfd);
            let dt = (v(t + FD_STEP, x) - v(t - FD_STEP, x)) / (2.0 * FD_STEP);
            worst = worst.max((dt - self.time_derivative(t, x)).abs());
            for i in 0..d {
                worst = worst.max((g[i] - gfd[i]).abs());
            }
            for k in 0..d * d {
                worst = worst.max((h[k] - hfd[k]).abs());
            }
        }
        worst
    }

    /// Fail unless declared derivatives match finite differences within `tol`.
    pub fn check_derivatives(&self, t: f64, points: &[Vec<f64>], tol: f64) -> Result<()> {
        let worst = self.derivative_discrepancy(t, points);
        if worst > tol {
            Err(Error::InvalidCoefficient(format!(
                "declared derivatives disagree with finite differences by {worst:e}"
            )))
        } else {
            Ok(())
        }
    }
}

fn fd_gradient(v: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64], g: &mut [f64]) {
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + FD_STEP;
        let p = v(t, &y);
        y[i] = x[i] - FD_STEP;
        let m = v(t, &y);
        y[i] = x[i];
        g[i] = (p - m) / (2.0 * FD_STEP);
    }
}

fn fd_hessian(v: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64], h: &mut [f64]) {
    let d = x.len();
    let e = 1e-3;
    let mut y = x.to_vec();
    let f0 = v(t, x);
    for i in 0..d {
        y[i] = x[i] + e;
        let p = v(t, &y);
        y[i] = x[i] - e;
        let m = v(t, &y);
        y[i] = x[i];
        h[i * d + i] = (p - 2.0 * f0 + m) / (e * e);
        for j in 0..i {
            let mut s = 0.0;
            for (si, sj, sign) in [(1.0, 1.0, 1.0), (-1.0, -1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0)] {
                y[i] = x[i] + si * e;
                y[j] = x[j] + sj * e;
                s += sign * v(t, &y);
            }
            y[i] = x[i];
            y[j] = x[j];
            h[i * d + j] = s / (4.0 * e * e);
            h[j * d + i] = h[i * d + j];
        }
    }
}

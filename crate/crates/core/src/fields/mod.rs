//! Coefficient fields `(a, b)` of the generator `L = 1/2 a:D^2 + b.grad`.

mod cutoff;
mod generator;
mod mollify;
mod pushforward;
mod sampled;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::{Grid, TimeGrid};
use crate::linalg;

pub use cutoff::{CutoffSpec, SmoothMap};
pub use generator::{
    apply_generator, carre_du_champ_at, divergence_generator, divergence_parts, generator_at, measured_norms,
    DivergenceField, GeneratorScratch,
};
pub use mollify::{jensen_functional, mollify_coefficients, Convolver, KernelFamily, MollifierKernel};
pub use pushforward::{pushforward_coefficients, pushforward_curve};
pub use sampled::SampledCoefficients;

/// `L^1_t L^inf_x` norm of the negative part of `div L`.
pub const NORM_DIV_NEG: &str = "L1t_Linf_x of (div L)^-";
/// `L^1_t L^inf_x` norm of the positive part of `sum_ij d_i d_j a^ij`.
pub const NORM_D2A_POS: &str = "L1t_Linf_x of ((nabla*)^2 a)^+";
/// `L^1_t L^inf_x` norm of `|b|`.
pub const NORM_B: &str = "L1t_Linf_x of b";
/// `L^inf_{t,x}` norm of the time derivative of `a`.
pub const NORM_DT_A: &str = "Linf_tx of dt a";

pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
type NormRule = Arc<dyn Fn(f64, f64) -> BTreeMap<String, f64> + Send + Sync>;

/// A time-dependent pair `(a, b)` with regularity metadata.
#[derive(Clone)]
pub struct CoefficientField {
    pub name: String,
    dim: usize,
    a: MatrixFn,
    b: MatrixFn,
    /// Uniform lower bound on the eigenvalues of `a` (0 when degenerate).
    pub ellipticity_lambda: f64,
    pub declared_norms: BTreeMap<String, f64>,
    pub time_dependent: bool,
    /// `a` and `b` do not depend on `x` (used for fast paths only).
    pub spatially_constant: bool,
    norm_rule: Option<NormRule>,
    sampled: Option<Arc<SampledCoefficients>>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("ellipticity_lambda", &self.ellipticity_lambda)
            .field("declared_norms", &self.declared_norms)
            .field("time_dependent", &self.time_dependent)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn from_fns<A, B>(name: impl Into<String>, dim: usize, a: A, b: B) -> Self
    where
        A: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        B: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            a: Arc::new(a),
            b: Arc::new(b),
            ellipticity_lambda: 0.0,
            declared_norms: BTreeMap::new(),
            time_dependent: false,
            spatially_constant: false,
            norm_rule: None,
            sampled: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.ellipticity_lambda = lambda;
        self
    }

    pub fn with_norm(mut self, key: &str, value: f64) -> Self {
        self.declared_norms.insert(key.to_string(), value);
        self
    }

    pub fn time_dependent(mut self, yes: bool) -> Self {
        self.time_dependent = yes;
        self
    }

    fn with_rule<R>(mut self, rule: R) -> Self
    where
        R: Fn(f64, f64) -> BTreeMap<String, f64> + Send + Sync + 'static,
    {
        self.norm_rule = Some(Arc::new(rule));
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diffusion matrix at `(t, x)`, row-major into `out` (length `d*d`).
    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.a)(t, x, out)
    }

    /// Drift vector at `(t, x)`.
    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.b)(t, x, out)
    }

    pub fn sampled_data(&self) -> Option<&Arc<SampledCoefficients>> {
        self.sampled.as_ref()
    }

    /// A copy whose declared norms are filled in for horizon `T` on the box of
    /// half width `L`; only closed-form fields carry such a rule.
    pub fn declared_on(&self, horizon: f64, half_width: f64) -> Self {
        let mut out = self.clone();
        if let Some(rule) = &self.norm_rule {
            out.declared_norms.extend(rule(horizon, half_width));
        }
        out
    }

    /// The field with time origin moved to `s`: `(a, b)(t, x)` becomes `(a, b)(s + t, x)`.
    /// Declared norms and norm rules are dropped.
    pub fn shifted(&self, s: f64) -> Self {
        if !self.time_dependent || s == 0.0 {
            return self.clone();
        }
        let (a, b) = (self.a.clone(), self.b.clone());
        Self {
            name: format!("{}@{s}", self.name),
            a: Arc::new(move |t, x, out| a(s + t, x, out)),
            b: Arc::new(move |t, x, out| b(s + t, x, out)),
            declared_norms: BTreeMap::new(),
            norm_rule: None,
            sampled: None,
            ..self.clone()
        }
    }

    /// A declared norm, or a metadata error naming it.
    pub fn norm(&self, key: &str) -> Result<f64> {
        self.declared_norms
            .get(key)
            .copied()
            .ok_or_else(|| Error::Metadata(format!("field '{}' does not declare '{key}'", self.name)))
    }

    /// Sample symmetry, positivity and ellipticity of `a` on the grid nodes at the
    /// time nodes (thinned to at most `max_points` spatial points per time).
    pub fn validate_on(&self, grid: &Grid, timegrid: &TimeGrid, max_points: usize) -> Result<()> {
        let d = self.dim;
        if grid.dim != d {
            return Err(Error::InvalidCoefficient(format!("field has dimension {d}, grid {}", grid.dim)));
        }
        let stride = grid.len().div_ceil(max_points.max(1)).max(1);
        let mut x = vec![0.0; d];
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for t in timegrid.nodes() {
            for k in (0..grid.len()).step_by(stride) {
                grid.node(k, &mut x);
                self.diffusion(t, &x, &mut a);
                self.drift(t, &x, &mut b);
                if a.iter().chain(&b).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidCoefficient(format!("non-finite coefficient at t={t}, x={x:?}")));
                }
                let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for i in 0..d {
                    for j in 0..i {
                        if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * scale {
                            return Err(Error::InvalidCoefficient(format!("a not symmetric at t={t}, x={x:?}")));
                        }
                    }
                }
                let m = linalg::min_eigenvalue(&a, d);
                if m < -1e-12 * scale {
                    return Err(Error::NotPsd { min_eigenvalue: m });
                }
                if self.ellipticity_lambda > 0.0 && m < self.ellipticity_lambda - 1e-10 {
                    return Err(Error::InvalidCoefficient(format!(
                        "declared ellipticity {} but min eigenvalue {m} at t={t}, x={x:?}",
                        self.ellipticity_lambda
                    )));
                }
            }
        }
        Ok(())
    }

    // ----- built-ins -----

    pub fn zero(dim: usize) -> Self {
        let mut f = Self::from_fns("zero", dim, |_, _, a| a.fill(0.0), |_, _, b| b.fill(0.0))
            .with_rule(|_, _| norms(0.0, 0.0, 0.0, 0.0));
        f.spatially_constant = true;
        f
    }

    /// Constant diffusion matrix `a` (row-major) and constant drift `b`.
    pub fn constant(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let d = b.len();
        if a.len() != d * d {
            return Err(Error::InvalidCoefficient("constant field: a must be d x d".into()));
        }
        linalg::sqrt_psd(&a, d)?;
        let lambda = linalg::min_eigenvalue(&a, d).max(0.0);
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut f = Self::from_fns("constant", d, move |_, _, o| o.copy_from_slice(&a), move |_, _, o| o.copy_from_slice(&b))
            .with_lambda(lambda)
            .with_rule(move |t, _| norms(0.0, 0.0, bn * t, 0.0));
        f.spatially_constant = true;
        Ok(f)
    }

    /// `a = c I`, `b = 0`: generator `(c/2) Laplacian`.
    pub fn heat(dim: usize, c: f64) -> Self {
        let mut f = Self::from_fns("heat", dim, move |_, _, a| scaled_identity(a, dim, c), |_, _, b| b.fill(0.0))
            .with_lambda(c.max(0.0))
            .with_rule(|_, _| norms(0.0, 0.0, 0.0, 0.0));
        f.spatially_constant = true;
        f
    }

    /// Ornstein-Uhlenbeck: `b = -theta x`, `a = c I`.
    pub fn ou(dim: usize, theta: f64, c: f64) -> Self {
        Self::from_fns(
            "ou",
            dim,
            move |_, _, a| scaled_identity(a, dim, c),
            move |_, x, b| {
                for (bi, xi) in b.iter_mut().zip(x) {
                    *bi = -theta * xi;
                }
            },
        )
        .with_lambda(c.max(0.0))
        .with_rule(move |t, l| {
            let div = -theta * dim as f64;
            norms(div.min(0.0).abs() * t, 0.0, theta.abs() * l * (dim as f64).sqrt() * t, 0.0)
        })
    }

    /// Constant drift `v` with `a = c I`.
    pub fn linear_drift(v: Vec<f64>, c: f64) -> Self {
        let dim = v.len();
        let speed = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut f = Self::from_fns(
            "linear-drift",
            dim,
            move |_, _, a| scaled_identity(a, dim, c),
            move |_, _, b| b.copy_from_slice(&v),
        )
        .with_lambda(c.max(0.0))
        .with_rule(move |t, _| norms(0.0, 0.0, speed * t, 0.0));
        f.spatially_constant = true;
        f
    }

    /// One-dimensional field whose drift has a single kink at the origin smoothed
    /// over `width`: `b(x) = -theta x - kappa sqrt(x^2 + width^2)`, `a = c`.
    pub fn sobolev_rough_1d(theta: f64, kappa: f64, width: f64, c: f64) -> Self {
        Self::from_fns(
            "sobolev-rough-1d",
            1,
            move |_, _, a| a[0] = c,
            move |_, x, b| b[0] = -theta * x[0] - kappa * (x[0] * x[0] + width * width).sqrt(),
        )
        .with_lambda(c.max(0.0))
        .with_rule(move |t, l| {
            let bsup = theta.abs() * l + kappa.abs() * (l * l + width * width).sqrt();
            norms((theta + kappa.abs()) * t, 0.0, bsup * t, 0.0)
        })
    }

    /// One-dimensional elliptic field `a(t,x) = 1 + amp sin(2 pi t)(1 + spatial cos x)`, `b = 0`.
    pub fn time_periodic(amp: f64, spatial: f64) -> Self {
        use std::f64::consts::PI;
        let lambda = 1.0 - amp.abs() * (1.0 + spatial.abs());
        Self::from_fns(
            "time-periodic",
            1,
            move |t, x, a| a[0] = 1.0 + amp * (2.0 * PI * t).sin() * (1.0 + spatial * x[0].cos()),
            |_, _, b| b[0] = 0.0,
        )
        .with_lambda(lambda.max(0.0))
        .time_dependent(true)
        .with_rule(move |t, _| {
            // integral of |sin(2 pi s)| over [0, t]
            let periods = (2.0 * t).floor();
            let rest = 2.0 * t - periods;
            let abs_sin = (periods + 0.5 * (1.0 - (PI * rest).cos())) / PI;
            let half = 0.5 * amp.abs() * spatial.abs() * abs_sin;
            norms(half, 2.0 * half, 0.0, 2.0 * PI * amp.abs() * (1.0 + spatial.abs()))
        })
    }

    /// Construct a named built-in from JSON parameters.
    pub fn builtin(name: &str, dim: usize, params: &BTreeMap<String, Value>) -> Result<Self> {
        let num = |key: &str, default: f64| -> Result<f64> {
            match params.get(key) {
                None => Ok(default),
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::Config(format!("field parameter '{key}' must be a number"))),
            }
        };
        let field = match name {
            "zero" => Self::zero(dim),
            "heat" => Self::heat(dim, num("a", 2.0)?),
            "ou" => Self::ou(dim, num("theta", 1.0)?, num("a", 2.0)?),
            "linear-drift" => {
                let v = match params.get("v") {
                    None => vec![1.0; dim],
                    Some(Value::Array(xs)) => xs
                        .iter()
                        .map(|x| x.as_f64().ok_or_else(|| Error::Config("'v' must hold numbers".into())))
                        .collect::<Result<Vec<f64>>>()?,
                    Some(Value::Number(n)) => vec![n.as_f64().unwrap_or(0.0); dim],
                    Some(_) => return Err(Error::Config("'v' must be a number or an array".into())),
                };
                if v.len() != dim {
                    return Err(Error::Config(format!("'v' has {} entries, expected {dim}", v.len())));
                }
                Self::linear_drift(v, num("a", 0.0)?)
            }
            "sobolev-rough-1d" => {
                if dim != 1 {
                    return Err(Error::Config("sobolev-rough-1d is one-dimensional".into()));
                }
                Self::sobolev_rough_1d(num("theta", 1.0)?, num("kappa", 0.5)?, num("width", 0.02)?, num("a", 1.0)?)
            }
            "time-periodic" => {
                if dim != 1 {
                    return Err(Error::Config("time-periodic is one-dimensional".into()));
                }
                Self::time_periodic(num("amp", 0.5)?, num("spatial", 0.5)?)
            }
            other => return Err(Error::Config(format!("unknown built-in field '{other}'"))),
        };
        Ok(field)
    }

    pub const BUILTINS: [&'static str; 6] = ["zero", "heat", "ou", "linear-drift", "sobolev-rough-1d", "time-periodic"];
}

fn scaled_identity(a: &mut [f64], d: usize, c: f64) {
    a.fill(0.0);
    for i in 0..d {
        a[i * d + i] = c;
    }
}

fn norms(div_neg: f64, d2a_pos: f64, b: f64, dt_a: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([
        (NORM_DIV_NEG.to_string(), div_neg),
        (NORM_D2A_POS.to_string(), d2a_pos),
        (NORM_B.to_string(), b),
        (NORM_DT_A.to_string(), dt_a),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn builtins_validate() {
        let g = Grid::new(1, 5.0, 64, Boundary::Absorbing).unwrap();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        for name in CoefficientField::BUILTINS {
            let f = CoefficientField::builtin(name, 1, &BTreeMap::new()).unwrap();
            f.validate_on(&g, &tg, 1000).unwrap();
            let f = f.declared_on(1.0, 5.0);
            assert!(f.norm(NORM_DIV_NEG).is_ok(), "{name}");
        }
        assert!(CoefficientField::builtin("nope", 1, &BTreeMap::new()).is_err());
    }

    #[test]
    fn false_ellipticity_is_rejected() {
        let g = Grid::new(1, 2.0, 16, Boundary::Absorbing).unwrap();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let f = CoefficientField::heat(1, 0.5).with_lambda(1.0);
        assert!(f.validate_on(&g, &tg, 100).is_err());
        let bad = CoefficientField::from_fns("neg", 1, |_, _, a| a[0] = -1.0, |_, _, b| b[0] = 0.0);
        assert!(matches!(bad.validate_on(&g, &tg, 100), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn missing_norm_is_a_metadata_error() {
        let f = CoefficientField::from_fns("x", 1, |_, _, a| a[0] = 1.0, |_, _, b| b[0] = 0.0);
        assert!(matches!(f.declared_on(1.0, 1.0).norm(NORM_B), Err(Error::Metadata(_))));
    }

    #[test]
    fn time_periodic_norm_arithmetic() {
        let f = CoefficientField::time_periodic(0.5, 0.5).declared_on(1.0, 3.0);
        // one full period: integral of |sin| is 2/pi
        let expect = 0.5 * 0.25 * 2.0 / std::f64::consts::PI;
        assert!((f.norm(NORM_DIV_NEG).unwrap() - expect).abs() < 1e-12);
        assert!((f.ellipticity_lambda - 0.25).abs() < 1e-15);
    }
}

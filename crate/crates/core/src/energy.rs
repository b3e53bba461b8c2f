//! Convex energies `int beta(u)`, the renormalization inequality, Gronwall
//! bounds and the two-scheme uniqueness audit.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{divergence_generator, CoefficientField, GeneratorScratch, NORM_B, NORM_D2A_POS, NORM_DIV_NEG, NORM_DT_A};
use crate::fpe::{solve_fpe, DensityCurve, FpeOptions, Scheme};
use crate::grid::{Boundary, Grid, TimeGrid};
use crate::testfn::TestFunction;

/// Smoothing parameter of the `|z|^r` profiles.
pub const POWER_SMOOTHING: f64 = 1e-6;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyLabel {
    Abs,
    Square,
    PowerR,
    Custom,
}

/// A convex `beta` with `beta(0) = 0` and its first two derivatives.
#[derive(Clone)]
pub struct EnergyProfile {
    pub label: EnergyLabel,
    pub name: String,
    /// Smoothing `delta` of `(z^2 + delta^2)^(r/2) - delta^r`, if any.
    pub smoothing: Option<f64>,
    beta: ScalarMap,
    d1: ScalarMap,
    d2: ScalarMap,
}

impl std::fmt::Debug for EnergyProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergyProfile").field("name", &self.name).field("smoothing", &self.smoothing).finish()
    }
}

impl EnergyProfile {
    pub fn custom(
        name: impl Into<String>,
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { label: EnergyLabel::Custom, name: name.into(), smoothing: None, beta: Arc::new(beta), d1: Arc::new(d1), d2: Arc::new(d2) }
    }

    /// `beta(z) = z`.
    pub fn linear() -> Self {
        Self::custom("z", |z| z, |_| 1.0, |_| 0.0)
    }

    /// `beta(z) = z^+`; `beta''` is taken as 0 away from the kink.
    pub fn positive_part() -> Self {
        Self::custom("z^+", |z: f64| z.max(0.0), |z| if z > 0.0 { 1.0 } else { 0.0 }, |_| 0.0)
    }

    /// `beta(z) = |z|`; `beta''` is taken as 0 away from the kink.
    pub fn abs() -> Self {
        Self { label: EnergyLabel::Abs, name: "|z|".into(), ..Self::custom("", |z: f64| z.abs(), |z: f64| z.signum(), |_| 0.0) }
    }

    pub fn square() -> Self {
        Self { label: EnergyLabel::Square, name: "z^2".into(), ..Self::custom("", |z| z * z, |z| 2.0 * z, |_| 2.0) }
    }

    /// `|z|^r`, replaced by `(z^2 + delta^2)^(r/2) - delta^r` with `delta = 1e-6` when `r < 2`.
    pub fn power_r(r: f64) -> Result<Self> {
        if !(r >= 1.0) {
            return Err(Error::Precondition(format!("power profile needs r >= 1, got {r}")));
        }
        if r >= 2.0 {
            return Ok(Self {
                label: EnergyLabel::PowerR,
                name: format!("|z|^{r}"),
                ..Self::custom(
                    "",
                    move |z: f64| z.abs().powf(r),
                    move |z: f64| r * z.signum() * z.abs().powf(r - 1.0),
                    move |z: f64| if r == 2.0 { 2.0 } else { r * (r - 1.0) * z.abs().powf(r - 2.0) },
                )
            });
        }
        let d = POWER_SMOOTHING;
        let d2 = d * d;
        Ok(Self {
            label: EnergyLabel::PowerR,
            name: format!("|z|^{r} (delta = {d:e})"),
            smoothing: Some(d),
            ..Self::custom(
                "",
                move |z: f64| (z * z + d2).powf(r / 2.0) - d.powf(r),
                move |z: f64| r * z * (z * z + d2).powf(r / 2.0 - 1.0),
                move |z: f64| {
                    let s = z * z + d2;
                    r * s.powf(r / 2.0 - 1.0) + r * (r - 2.0) * z * z * s.powf(r / 2.0 - 2.0)
                },
            )
        })
    }

    pub fn beta(&self, z: f64) -> f64 {
        (self.beta)(z)
    }

    pub fn d1(&self, z: f64) -> f64 {
        (self.d1)(z)
    }

    pub fn d2(&self, z: f64) -> f64 {
        (self.d2)(z)
    }

    /// `beta'(z) z - beta(z)`.
    pub fn defect_weight(&self, z: f64) -> f64 {
        self.d1(z) * z - self.beta(z)
    }

    /// Checks `beta(0) = 0`, `beta'' >= 0` and `beta'(z) z - beta(z) >= 0` on a sample of `[-range, range]`.
    pub fn validate(&self, range: f64) -> Result<()> {
        if self.beta(0.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("profile {} has beta(0) = {}", self.name, self.beta(0.0))));
        }
        for k in -200..=200 {
            let z = range * k as f64 / 200.0;
            let scale = 1e-10 * (1.0 + self.beta(z).abs());
            if self.d2(z) < -1e-12 || self.defect_weight(z) < -scale {
                return Err(Error::Precondition(format!("profile {} is not convex with beta(0) = 0 near z = {z}", self.name)));
            }
        }
        Ok(())
    }
}

/// `int beta(u)` by grid quadrature.
pub fn beta_energy(grid: &Grid, u: &[f64], beta: &EnergyProfile) -> f64 {
    grid.integrate(&u.iter().map(|z| beta.beta(*z)).collect::<Vec<_>>())
}

/// `int beta(u_t)` at every time node of the curve.
pub fn energy_series(nu: &DensityCurve, beta: &EnergyProfile) -> Vec<f64> {
    (0..=nu.timegrid.steps).map(|k| beta_energy(&nu.grid, nu.at(k), beta)).collect()
}

/// Largest increase of `int beta(u_t)` per unit time between consecutive nodes (0 if non-increasing).
pub fn max_energy_increase_rate(nu: &DensityCurve, beta: &EnergyProfile) -> f64 {
    let e = energy_series(nu, beta);
    let dt = nu.timegrid.dt();
    e.windows(2).map(|w| (w[1] - w[0]) / dt).fold(0.0, f64::max)
}

/// Central-difference gradient of a grid function (one-sided at absorbing edges), as `[node * d + axis]`.
pub fn grid_gradient(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let d = grid.dim;
    let h = grid.spacing();
    let mut g = vec![0.0; u.len() * d];
    for k in 0..u.len() {
        for axis in 0..d {
            let (p, m) = (grid.neighbor(k, axis, 1), grid.neighbor(k, axis, -1));
            g[k * d + axis] = match (p, m) {
                (Some(p), Some(m)) => (u[p] - u[m]) / (2.0 * h),
                (Some(p), None) => (u[p] - u[k]) / h,
                (None, Some(m)) => (u[k] - u[m]) / h,
                (None, None) => 0.0,
            };
        }
    }
    g
}

/// `L_t g` for a grid function by central differences.
pub fn grid_generator(field: &CoefficientField, t: f64, grid: &Grid, g: &[f64]) -> Vec<f64> {
    let d = grid.dim;
    let grad = grid_gradient(grid, g);
    let second: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let gi: Vec<f64> = (0..g.len()).map(|k| grad[k * d + i]).collect();
            grid_gradient(grid, &gi)
        })
        .collect();
    let mut s = GeneratorScratch::new(d);
    let mut x = vec![0.0; d];
    (0..g.len())
        .map(|k| {
            grid.node(k, &mut x);
            field.diffusion(t, &x, &mut s.a);
            field.drift(t, &x, &mut s.b);
            let mut v = 0.0;
            for i in 0..d {
                v += s.b[i] * grad[k * d + i];
                for j in 0..d {
                    v += 0.5 * s.a[i * d + j] * second[i][k * d + j];
                }
            }
            v
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormalizationRow {
    pub step: usize,
    pub time: f64,
    /// Difference quotient of `int f beta(u)`.
    pub lhs: f64,
    /// `int (d_t + L) f beta(u) + int f [beta'(u) u - beta(u)] (div L)^-`, trapezoid average.
    pub rhs: f64,
    /// `1/2 int f beta''(u) a(grad u, grad u)`, trapezoid average.
    pub dropped: f64,
    /// `max(0, lhs - rhs)`.
    pub defect: f64,
}

/// The renormalized inequality step by step along a density curve.
pub fn renormalization_defect(
    nu: &DensityCurve,
    field: &CoefficientField,
    beta: &EnergyProfile,
    f: &TestFunction,
) -> Result<Vec<RenormalizationRow>> {
    let grid = &nu.grid;
    let d = grid.dim;
    let range = nu.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..=20 {
        let z = range * k as f64 / 20.0;
        for v in [beta.d2(z), beta.d2(-z)] {
            if !v.is_finite() || v > 1e12 {
                return Err(Error::Precondition(format!("beta'' of {} is unbounded on the range |u| <= {range}", beta.name)));
            }
        }
    }
    let times = nu.timegrid.nodes();
    let terms: Vec<(f64, f64, f64)> = times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| -> Result<(f64, f64, f64)> {
            let u = nu.at(k);
            let fvals = grid.sample(|x| f.value(t, x));
            if fvals.iter().any(|v| *v < -1e-14) {
                return Err(Error::Precondition("the test function must be nonnegative".into()));
            }
            let mut s = GeneratorScratch::new(d);
            let mut x = vec![0.0; d];
            let div = divergence_generator(field, t, grid);
            let grad = grid_gradient(grid, u);
            let (mut energy, mut rhs, mut dropped) = (vec![0.0; u.len()], vec![0.0; u.len()], vec![0.0; u.len()]);
            for i in 0..u.len() {
                grid.node(i, &mut x);
                let lf = f.time_derivative(t, &x) + crate::fields::generator_at(field, f, t, &x, &mut s);
                let bu = beta.beta(u[i]);
                energy[i] = fvals[i] * bu;
                rhs[i] = lf * bu + fvals[i] * beta.defect_weight(u[i]) * (-div.values[i]).max(0.0);
                field.diffusion(t, &x, &mut s.a);
                let mut q = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        q += s.a[a * d + b] * grad[i * d + a] * grad[i * d + b];
                    }
                }
                dropped[i] = 0.5 * fvals[i] * beta.d2(u[i]) * q;
            }
            Ok((grid.integrate(&energy), grid.integrate(&rhs), grid.integrate(&dropped)))
        })
        .collect::<Result<_>>()?;
    let dt = nu.timegrid.dt();
    Ok((0..nu.timegrid.steps)
        .map(|k| {
            let lhs = (terms[k + 1].0 - terms[k].0) / dt;
            let rhs = 0.5 * (terms[k].1 + terms[k + 1].1);
            RenormalizationRow {
                step: k,
                time: times[k],
                lhs,
                rhs,
                dropped: 0.5 * (terms[k].2 + terms[k + 1].2),
                defect: (lhs - rhs).max(0.0),
            }
        })
        .collect())
}

/// Both sides of `int L(beta'(u)) u <= int [beta'(u) u - beta(u)] (div L)^-` at time `t`.
pub fn ibp_check(field: &CoefficientField, t: f64, grid: &Grid, u: &[f64], beta: &EnergyProfile) -> (f64, f64) {
    let g: Vec<f64> = u.iter().map(|z| beta.d1(*z)).collect();
    let lg = grid_generator(field, t, grid, &g);
    let lhs = grid.inner(&lg, u);
    let div = divergence_generator(field, t, grid);
    let w: Vec<f64> = u.iter().zip(&div.values).map(|(z, v)| beta.defect_weight(*z) * (-v).max(0.0)).collect();
    (lhs, grid.integrate(&w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Degenerate,
    Elliptic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallBound {
    pub value: f64,
    pub exponent: f64,
    pub warning: Option<String>,
}

/// Threshold on `r / (2 (r/2 - 1)^2)` above which the elliptic bound is flagged.
const ELLIPTIC_BLOWUP_WARNING: f64 = 100.0;

/// `sup_t |u_t|_r` bound from the declared norms of `field`.
/// Degenerate: `u0 exp((1 - 1/r) |(div L)^-|)`. Elliptic, `r > 2`:
/// `u0 exp((1 - 1/r) |((nabla*)^2 a)^+| + r |b| / (2 (r/2 - 1)^2 lambda))`;
/// elliptic, `r = 2`: `u0 exp((|((nabla*)^2 a)^+| + 4 |b| / lambda) / 2)`.
pub fn gronwall_bound(u0_norm: f64, field: &CoefficientField, r: f64, regime: Regime) -> Result<GronwallBound> {
    if !(r > 1.0) {
        return Err(Error::Precondition(format!("need r > 1, got {r}")));
    }
    match regime {
        Regime::Degenerate => {
            let exponent = (1.0 - 1.0 / r) * field.norm(NORM_DIV_NEG)?;
            Ok(GronwallBound { value: u0_norm * exponent.exp(), exponent, warning: None })
        }
        Regime::Elliptic => {
            let lambda = field.ellipticity_lambda;
            if lambda <= 0.0 {
                return Err(Error::Hypothesis(format!("ellipticity: field '{}' declares lambda = {lambda}", field.name)));
            }
            let d2a = field.norm(NORM_D2A_POS)?;
            let b = field.norm(NORM_B)?;
            if r < 2.0 {
                return Err(Error::Precondition(format!("the elliptic bound needs r >= 2, got {r}")));
            }
            let (exponent, warning) = if r == 2.0 {
                (0.5 * (d2a + 4.0 * b / lambda), None)
            } else {
                let factor = r / (2.0 * (r / 2.0 - 1.0).powi(2));
                let warning = (factor > ELLIPTIC_BLOWUP_WARNING)
                    .then(|| format!("r = {r} is close to 2: the factor r / (2 (r/2 - 1)^2) = {factor:.3e} blows up"));
                ((1.0 - 1.0 / r) * d2a + factor * b / lambda, warning)
            };
            Ok(GronwallBound { value: u0_norm * exponent.exp(), exponent, warning })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub satisfied: bool,
    pub detail: String,
}

/// The hypotheses of the well-posedness theorem for `regime`, checked against the
/// declared metadata of `field`.
pub fn hypothesis_checklist(field: &CoefficientField, r: f64, regime: Regime) -> Vec<Hypothesis> {
    let finite = |key: &str| match field.declared_norms.get(key) {
        Some(v) if v.is_finite() => (true, format!("'{key}' = {v}")),
        Some(v) => (false, format!("'{key}' = {v}")),
        None => (false, format!("'{key}' not declared")),
    };
    let mut list = Vec::new();
    let mut push = |name: &str, (ok, detail): (bool, String)| list.push(Hypothesis { name: name.into(), satisfied: ok, detail });
    match regime {
        Regime::Degenerate => {
            push("(div L)^- in L1_t Linf_x", finite(NORM_DIV_NEG));
            push("r >= 2p/(p-1) with p = inf on the box", (r >= 2.0, format!("r = {r}")));
        }
        Regime::Elliptic => {
            let lambda = field.ellipticity_lambda;
            push("a elliptic", (lambda > 0.0, format!("lambda = {lambda}")));
            push("b in L1_t Linf_x", finite(NORM_B));
            push("((nabla*)^2 a)^+ in L1_t Linf_x", finite(NORM_D2A_POS));
            push("d_t a in Linf_tx", finite(NORM_DT_A));
            push("r >= 2", (r >= 2.0, format!("r = {r}")));
        }
    }
    list
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub r: f64,
    pub regime: Regime,
    pub half_width: f64,
    pub boundary: Boundary,
    pub horizon: f64,
    pub resolutions: Vec<usize>,
    /// Time steps at the first resolution; scaled proportionally with `n`.
    pub base_steps: usize,
    pub schemes: (Scheme, Scheme),
    /// `L^2` size of the injected initial perturbation (0 disables it).
    pub perturbation: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            r: 2.0,
            regime: Regime::Degenerate,
            half_width: 8.0,
            boundary: Boundary::Absorbing,
            horizon: 1.0,
            resolutions: vec![128, 256, 512],
            base_steps: 32,
            schemes: (Scheme::Explicit, Scheme::SemiImplicit),
            perturbation: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub initial_norm: f64,
    pub predicted_bound: f64,
    pub measured: f64,
    /// Disagreement of the two schemes on the perturbation growth.
    pub scheme_error: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub field: String,
    pub config: AuditConfig,
    pub hypotheses: Vec<Hypothesis>,
    /// `sup_t |u - v|_r` per resolution.
    pub differences: Vec<f64>,
    /// `differences[i] / differences[i + 1]`.
    pub ratios: Vec<f64>,
    pub gronwall: GronwallBound,
    pub perturbation: Option<PerturbationReport>,
}

impl UniquenessReport {
    pub fn converges(&self, min_ratio: f64) -> bool {
        self.ratios.iter().all(|r| *r >= min_ratio)
    }
}

/// `sup_t |u_t - v_t|_r` over the common time nodes.
pub fn sup_difference(u: &DensityCurve, v: &DensityCurve, r: f64) -> f64 {
    (0..=u.timegrid.steps)
        .map(|k| {
            let d: Vec<f64> = u.at(k).iter().zip(v.at(k)).map(|(a, b)| a - b).collect();
            u.grid.norm(&d, r)
        })
        .fold(0.0, f64::max)
}

/// Solve with two schemes on a joint refinement ladder and compare; optionally
/// inject a positive perturbation of the initial datum and compare its growth with
/// the Gronwall bound. Refused when a hypothesis of the chosen theorem is not declared.
pub fn uniqueness_audit(
    field: &CoefficientField,
    u0: &(dyn Fn(&[f64]) -> f64 + Sync),
    config: &AuditConfig,
) -> Result<UniquenessReport> {
    let declared = field.declared_on(config.horizon, config.half_width);
    let hypotheses = hypothesis_checklist(&declared, config.r, config.regime);
    if let Some(h) = hypotheses.iter().find(|h| !h.satisfied) {
        return Err(Error::Hypothesis(format!("{} ({})", h.name, h.detail)));
    }
    if config.resolutions.is_empty() {
        return Err(Error::Precondition("need at least one resolution".into()));
    }
    let gronwall = gronwall_bound(1.0, &declared, config.r, config.regime)?;
    let n0 = config.resolutions[0];
    let dim = field.dim();
    let runs: Vec<(Grid, TimeGrid)> = config
        .resolutions
        .iter()
        .map(|&n| {
            let grid = Grid::new(dim, config.half_width, n, config.boundary)?;
            let steps = (config.base_steps * n).div_ceil(n0);
            Ok((grid, TimeGrid::new(config.horizon, steps)?))
        })
        .collect::<Result<_>>()?;
    let solve = |grid: &Grid, tg: &TimeGrid, init: &[f64], scheme: Scheme| {
        solve_fpe(field, init, tg, grid, &FpeOptions::with_scheme(scheme))
    };
    let mut differences = Vec::new();
    for (grid, tg) in &runs {
        let init = grid.sample(u0);
        let a = solve(grid, tg, &init, config.schemes.0)?;
        let b = solve(grid, tg, &init, config.schemes.1)?;
        differences.push(sup_difference(&a, &b, config.r));
    }
    let ratios = differences.windows(2).map(|w| w[0] / w[1]).collect();
    let perturbation = if config.perturbation > 0.0 {
        let (grid, tg) = runs.last().expect("nonempty");
        let init = grid.sample(u0);
        let shape = grid.sample(|x| (-x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / 0.5).exp());
        let scale = config.perturbation / grid.norm(&shape, 2.0);
        let bumped: Vec<f64> = init.iter().zip(&shape).map(|(u, s)| u + scale * s).collect();
        let delta0: Vec<f64> = shape.iter().map(|s| scale * s).collect();
        let mut growth = Vec::new();
        for scheme in [config.schemes.0, config.schemes.1] {
            let a = solve(grid, tg, &init, scheme)?;
            let b = solve(grid, tg, &bumped, scheme)?;
            growth.push(sup_difference(&a, &b, config.r));
        }
        let initial_norm = grid.norm(&delta0, config.r);
        let predicted_bound = gronwall_bound(initial_norm, &declared, config.r, config.regime)?.value;
        let scheme_error = (growth[0] - growth[1]).abs();
        let measured = growth[0].max(growth[1]);
        Some(PerturbationReport { initial_norm, predicted_bound, measured, scheme_error, passes: measured <= predicted_bound * (1.0 + 1e-12) + scheme_error })
    } else {
        None
    };
    Ok(UniquenessReport { field: field.name.clone(), config: config.clone(), hypotheses, differences, ratios, gronwall, perturbation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpe::gaussian_density;

    #[test]
    fn energies_of_gaussian() {
        let g = Grid::absorbing_1d(10.0, 1024).unwrap();
        let u = g.sample(|x| gaussian_density(x, 0.0, 1.0));
        assert!((beta_energy(&g, &u, &EnergyProfile::linear()) - 1.0).abs() < 1e-10);
        assert!((beta_energy(&g, &u, &EnergyProfile::positive_part()) - 1.0).abs() < 1e-10);
        let sq = beta_energy(&g, &u, &EnergyProfile::square());
        assert!((sq - 0.5 / std::f64::consts::PI.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn profiles_are_valid() {
        for p in [EnergyProfile::square(), EnergyProfile::abs(), EnergyProfile::power_r(1.5).unwrap(), EnergyProfile::power_r(3.0).unwrap()] {
            p.validate(5.0).unwrap();
        }
        let concave = EnergyProfile::custom("-z^2", |z| -z * z, |z| -2.0 * z, |_| -2.0);
        assert!(concave.validate(1.0).is_err());
        let p = EnergyProfile::power_r(1.5).unwrap();
        assert_eq!(p.smoothing, Some(POWER_SMOOTHING));
        assert!((p.beta(2.0) - 2f64.powf(1.5)).abs() < 1e-9);
    }

    #[test]
    fn gronwall_cases() {
        let zero = CoefficientField::zero(1).declared_on(1.0, 1.0);
        assert_eq!(gronwall_bound(3.0, &zero, 2.0, Regime::Degenerate).unwrap().value, 3.0);
        let f = CoefficientField::heat(1, 1.0)
            .with_norm(NORM_B, 1.0)
            .with_norm(NORM_D2A_POS, 0.0)
            .with_norm(NORM_DIV_NEG, 4f64.ln());
        let e = gronwall_bound(1.0, &f, 4.0, Regime::Elliptic).unwrap();
        assert!((e.exponent - 2.0).abs() < 1e-15 && (e.value - 2f64.exp()).abs() < 1e-12);
        assert!((gronwall_bound(1.0, &f, 2.0, Regime::Degenerate).unwrap().value - 2.0).abs() < 1e-12);
        assert!((gronwall_bound(1.0, &f, 2.0, Regime::Elliptic).unwrap().exponent - 2.0).abs() < 1e-15);
        assert!(gronwall_bound(1.0, &f, 2.05, Regime::Elliptic).unwrap().warning.is_some());
        assert!(matches!(gronwall_bound(1.0, &CoefficientField::heat(1, 1.0), 2.0, Regime::Degenerate), Err(Error::Metadata(_))));
        assert!(matches!(gronwall_bound(1.0, &CoefficientField::zero(1).declared_on(1.0, 1.0), 2.0, Regime::Elliptic), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn renormalization_for_heat() {
        let g = Grid::absorbing_1d(8.0, 512).unwrap();
        let tg = TimeGrid::new(0.2, 20).unwrap();
        let field = CoefficientField::heat(1, 1.0);
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 0.5));
        let nu = solve_fpe(&field, &u0, &tg, &g, &FpeOptions::default()).unwrap();
        let mass = renormalization_defect(&nu, &field, &EnergyProfile::linear(), &TestFunction::constant(1, 1.0)).unwrap();
        assert!(mass.iter().all(|r| r.defect <= 1e-8));
        let sq = renormalization_defect(&nu, &field, &EnergyProfile::square(), &TestFunction::constant(1, 1.0)).unwrap();
        // dropped term 1/2 * 2 * int |grad u|^2 for N(0, v): 1 / (4 sqrt(pi) v^(3/2))
        for r in &sq {
            let v0 = 0.5 + r.time;
            let v1 = v0 + tg.dt();
            let exact = 0.5 * (1.0 / (4.0 * std::f64::consts::PI.sqrt() * v0.powf(1.5)) + 1.0 / (4.0 * std::f64::consts::PI.sqrt() * v1.powf(1.5)));
            assert!((r.dropped - exact).abs() < 2e-3 * exact, "{} vs {exact}", r.dropped);
            assert!(r.defect <= 1e-6);
        }
    }

    #[test]
    fn ibp_inequality_for_ou() {
        let g = Grid::absorbing_1d(8.0, 400).unwrap();
        let u = g.sample(|x| gaussian_density(x, 0.3, 0.7));
        for beta in [EnergyProfile::square(), EnergyProfile::power_r(1.5).unwrap(), EnergyProfile::power_r(3.0).unwrap()] {
            let (l, r) = ibp_check(&CoefficientField::ou(1, 1.0, 2.0), 0.0, &g, &u, &beta);
            assert!(l <= r + 1e-6, "{}: {l} > {r}", beta.name);
        }
    }

    #[test]
    fn same_scheme_difference_is_zero() {
        let cfg = AuditConfig { resolutions: vec![64], schemes: (Scheme::Explicit, Scheme::Explicit), perturbation: 0.0, ..Default::default() };
        let rep = uniqueness_audit(&CoefficientField::heat(1, 1.0), &|x| gaussian_density(x, 0.0, 1.0), &cfg).unwrap();
        assert_eq!(rep.differences, vec![0.0]);
    }

    #[test]
    fn audit_refuses_missing_hypothesis() {
        let cfg = AuditConfig { regime: Regime::Elliptic, resolutions: vec![64], ..Default::default() };
        let field = CoefficientField::from_fns("bare", 1, |_, _, a| a[0] = 1.0, |_, _, b| b[0] = 0.0).with_lambda(1.0);
        match uniqueness_audit(&field, &|x| gaussian_density(x, 0.0, 1.0), &cfg) {
            Err(Error::Hypothesis(msg)) => assert!(msg.contains("b in L1_t Linf_x")),
            other => panic!("{other:?}"),
        }
    }
}

//! Commutators of smoothing semigroups with first-order, second-order and time
//! derivatives, their bounds and the Bakry-Emery interpolation identity.
//!
//! Heat-semigroup commutators live on periodic grids and use spectral
//! derivatives. Norms of coefficient derivatives are measured on the grid by
//! central differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{Grid, TimeGrid};
use crate::smoothing::{WeightedSemigroup, DEFAULT_WEIGHTED_STEPS};
use crate::spectral::Spectral;

/// Hölder triple `1/q + 1/r + 1/s = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LebesgueExponents {
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

impl LebesgueExponents {
    pub fn new(q: f64, r: f64, s: f64) -> Result<Self> {
        if [q, r, s].iter().any(|p| !(*p > 1.0)) {
            return Err(Error::Precondition(format!("exponents must lie in (1, inf], got ({q}, {r}, {s})")));
        }
        let sum = 1.0 / q + 1.0 / r + 1.0 / s;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("1/q + 1/r + 1/s = {sum}, expected 1")));
        }
        Ok(Self { q, r, s })
    }

    /// `(inf, 2, 2)`.
    pub fn l2() -> Self {
        Self { q: f64::INFINITY, r: 2.0, s: 2.0 }
    }
}

/// Multiplicative constants of the three bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConstants {
    pub drift: f64,
    pub diffusion: f64,
    /// Multiplies `2 / lambda`.
    pub time: f64,
}

impl Default for AuditConstants {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self { drift: 2.0 * pi + 4.0, diffusion: 4.0 * pi + 8.0, time: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutatorValue {
    pub value: f64,
    pub bound: f64,
    /// `alpha int u [Laplacian, a : D^2] P^alpha f` (diffusion only, else 0).
    pub taylor_term: f64,
    /// `bound / c`: the bound with unit constant.
    pub unit_bound: f64,
    /// Drift only: the bound with the symmetric part of `grad b` (unit constant).
    pub unit_bound_sym: f64,
}

impl CommutatorValue {
    /// The quantity the bound controls: `value` or `value - taylor_term`.
    pub fn controlled(&self) -> f64 {
        (self.value - self.taylor_term).abs()
    }

    pub fn passes(&self) -> bool {
        self.controlled() <= self.bound
    }

    /// Smallest constant for which this point would still pass.
    pub fn tightest_constant(&self) -> f64 {
        if self.unit_bound > 0.0 {
            self.controlled() / self.unit_bound
        } else if self.controlled() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn check_inputs(field: &CoefficientField, grid: &Grid, u: &[f64], f: &[f64], alpha: f64) -> Result<()> {
    if field.dim() != grid.dim || u.len() != grid.len() || f.len() != grid.len() {
        return Err(Error::Precondition("field, grid and grid functions disagree in size".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Precondition(format!("alpha must be nonnegative, got {alpha}")));
    }
    Ok(())
}

/// Pointwise `|grad b|` and `|D^sym b|` (Frobenius) by central differences.
pub fn drift_gradient_norms(field: &CoefficientField, t: f64, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let d = grid.dim;
    let h = grid.spacing();
    let rows: Vec<(f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d * d]),
            |(x, bp, bm, jac), k| {
                grid.node(k, x);
                for j in 0..d {
                    x[j] += h;
                    field.drift(t, x, bp);
                    x[j] -= 2.0 * h;
                    field.drift(t, x, bm);
                    x[j] += h;
                    for i in 0..d {
                        jac[i * d + j] = (bp[i] - bm[i]) / (2.0 * h);
                    }
                }
                let full = jac.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut sym = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        sym += (0.5 * (jac[i * d + j] + jac[j * d + i])).powi(2);
                    }
                }
                (full, sym.sqrt())
            },
        )
        .collect();
    (rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect())
}

/// Pointwise `|D^2 a|` (Frobenius over all `a^ij` and second derivatives).
pub fn diffusion_hessian_norm(field: &CoefficientField, t: f64, grid: &Grid) -> Vec<f64> {
    let d = grid.dim;
    let h = grid.spacing();
    (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; d], vec![0.0; d], [vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d * d]]),
            |(x0, y, a), idx| {
                grid.node(idx, x0);
                let mut total = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        let offsets = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
                        for (slot, (sk, sl)) in offsets.iter().enumerate() {
                            y.copy_from_slice(x0);
                            if k == l {
                                // reuse the slots as x + h, x, x - h (and x again)
                                y[k] += [h, 0.0, -h, 0.0][slot];
                            } else {
                                y[k] += sk * h;
                                y[l] += sl * h;
                            }
                            field.diffusion(t, y, &mut a[slot]);
                        }
                        for e in 0..d * d {
                            let v = if k == l {
                                (a[0][e] - 2.0 * a[1][e] + a[2][e]) / (h * h)
                            } else {
                                (a[0][e] - a[1][e] - a[2][e] + a[3][e]) / (4.0 * h * h)
                            };
                            total += v * v;
                        }
                    }
                }
                total.sqrt()
            },
        )
        .collect()
}

/// `b . grad g` with spectral derivatives.
fn drift_apply(spec: &Spectral, b: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for (i, bi) in b.iter().enumerate() {
        for ((o, v), c) in out.iter_mut().zip(spec.derivative(g, i)).zip(bi) {
            *o += c * v;
        }
    }
    out
}

/// `a : D^2 g` with spectral derivatives.
fn diffusion_apply(spec: &Spectral, a: &[Vec<f64>], d: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 0..d {
        for j in 0..d {
            for ((o, v), c) in out.iter_mut().zip(spec.second_derivative(g, i, j)).zip(&a[i * d + j]) {
                *o += c * v;
            }
        }
    }
    out
}

/// Node samples of the drift components.
fn sample_drift(field: &CoefficientField, t: f64, grid: &Grid) -> Vec<Vec<f64>> {
    let d = grid.dim;
    let mut out = vec![vec![0.0; grid.len()]; d];
    let (mut x, mut b) = (vec![0.0; d], vec![0.0; d]);
    for k in 0..grid.len() {
        grid.node(k, &mut x);
        field.drift(t, &x, &mut b);
        for i in 0..d {
            out[i][k] = b[i];
        }
    }
    out
}

fn sample_diffusion(field: &CoefficientField, t: f64, grid: &Grid) -> Vec<Vec<f64>> {
    let d = grid.dim;
    let mut out = vec![vec![0.0; grid.len()]; d * d];
    let (mut x, mut a) = (vec![0.0; d], vec![0.0; d * d]);
    for k in 0..grid.len() {
        grid.node(k, &mut x);
        field.diffusion(t, &x, &mut a);
        for e in 0..d * d {
            out[e][k] = a[e];
        }
    }
    out
}

/// `int u [P^alpha, b . grad] f` at time `t` on a periodic grid, with the bound
/// `c |grad b|_q |u|_r |f|_s`.
#[allow(clippy::too_many_arguments)]
pub fn commutator_drift(
    field: &CoefficientField,
    grid: &Grid,
    t: f64,
    u: &[f64],
    f: &[f64],
    alpha: f64,
    exps: &LebesgueExponents,
    constants: &AuditConstants,
) -> Result<CommutatorValue> {
    check_inputs(field, grid, u, f, alpha)?;
    let spec = Spectral::new(grid)?;
    let b = sample_drift(field, t, grid);
    let value = if alpha == 0.0 {
        0.0
    } else {
        let lhs = spec.heat(&drift_apply(&spec, &b, f), alpha);
        let rhs = drift_apply(&spec, &b, &spec.heat(f, alpha));
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(p, q)| p - q).collect();
        grid.inner(u, &diff)
    };
    let (full, sym) = drift_gradient_norms(field, t, grid);
    let uf = grid.norm(u, exps.r) * grid.norm(f, exps.s);
    let unit = grid.norm(&full, exps.q) * uf;
    Ok(CommutatorValue {
        value,
        bound: constants.drift * unit,
        taylor_term: 0.0,
        unit_bound: unit,
        unit_bound_sym: grid.norm(&sym, exps.q) * uf,
    })
}

/// `int u [P^alpha, a : D^2] f`, its first-order Taylor term and the residual bound
/// `c |D^2 a|_q |u|_r |f|_s`.
#[allow(clippy::too_many_arguments)]
pub fn commutator_diffusion(
    field: &CoefficientField,
    grid: &Grid,
    t: f64,
    u: &[f64],
    f: &[f64],
    alpha: f64,
    exps: &LebesgueExponents,
    constants: &AuditConstants,
) -> Result<CommutatorValue> {
    check_inputs(field, grid, u, f, alpha)?;
    let spec = Spectral::new(grid)?;
    let d = grid.dim;
    let a = sample_diffusion(field, t, grid);
    let (value, taylor_term) = if alpha == 0.0 {
        (0.0, 0.0)
    } else {
        let lhs = spec.heat(&diffusion_apply(&spec, &a, d, f), alpha);
        let pf = spec.heat(f, alpha);
        let rhs = diffusion_apply(&spec, &a, d, &pf);
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(p, q)| p - q).collect();
        let t1 = spec.laplacian(&rhs);
        let t2 = diffusion_apply(&spec, &a, d, &spec.laplacian(&pf));
        let comm: Vec<f64> = t1.iter().zip(&t2).map(|(p, q)| p - q).collect();
        (grid.inner(u, &diff), alpha * grid.inner(u, &comm))
    };
    let hess = diffusion_hessian_norm(field, t, grid);
    let unit = grid.norm(&hess, exps.q) * grid.norm(u, exps.r) * grid.norm(f, exps.s);
    Ok(CommutatorValue { value, bound: constants.diffusion * unit, taylor_term, unit_bound: unit, unit_bound_sym: unit })
}

/// Largest `|d_t a|` over the grid nodes and the time nodes, by central differences in time.
pub fn measured_dt_a(field: &CoefficientField, grid: &Grid, timegrid: &TimeGrid) -> f64 {
    let d = grid.dim;
    let eps = 1e-5 * timegrid.horizon.max(1.0);
    let (mut x, mut a0, mut a1) = (vec![0.0; d], vec![0.0; d * d], vec![0.0; d * d]);
    let mut worst = 0.0f64;
    for t in timegrid.nodes() {
        for k in 0..grid.len() {
            grid.node(k, &mut x);
            field.diffusion(t + eps, &x, &mut a1);
            field.diffusion(t - eps, &x, &mut a0);
            for (p, q) in a1.iter().zip(&a0) {
                worst = worst.max(((p - q) / (2.0 * eps)).abs());
            }
        }
    }
    worst
}

fn central_time_derivative(values: &[f64], n: usize, timegrid: &TimeGrid) -> Vec<f64> {
    let m = timegrid.steps;
    let dt = timegrid.dt();
    let mut out = vec![0.0; values.len()];
    for k in 0..=m {
        let (lo, hi, span) = match k {
            0 => (0, 1, dt),
            k if k == m => (m - 1, m, dt),
            k => (k - 1, k + 1, 2.0 * dt),
        };
        for i in 0..n {
            out[k * n + i] = (values[hi * n + i] - values[lo * n + i]) / span;
        }
    }
    out
}

fn trapezoid_weights(timegrid: &TimeGrid) -> Vec<f64> {
    let dt = timegrid.dt();
    (0..=timegrid.steps)
        .map(|k| if k == 0 || k == timegrid.steps { 0.5 * dt } else { dt })
        .collect()
}

/// `int int u [P_a^alpha d_t f - d_t P_a^alpha f]` for space-time grid functions
/// (time-major), with `P_a` frozen fiberwise and `d_t` by central differences.
/// The bound is `c (2 / lambda) |d_t a|_inf |u|_2 |f|_2`.
#[allow(clippy::too_many_arguments)]
pub fn commutator_time(
    field: &CoefficientField,
    grid: &Grid,
    timegrid: &TimeGrid,
    u: &[f64],
    f: &[f64],
    alpha: f64,
    constants: &AuditConstants,
    steps: usize,
) -> Result<CommutatorValue> {
    let n = grid.len();
    let nt = timegrid.steps + 1;
    if u.len() != n * nt || f.len() != n * nt {
        return Err(Error::Precondition("space-time functions must have (M + 1) x grid values".into()));
    }
    let lambda = field.ellipticity_lambda;
    if lambda <= 0.0 {
        return Err(Error::Precondition(format!("field '{}' is not elliptic", field.name)));
    }
    let dt_a = measured_dt_a(field, grid, timegrid);
    if !field.time_dependent && dt_a > 1e-10 {
        return Err(Error::Metadata(format!(
            "field '{}' is declared time-independent but |d_t a| reaches {dt_a:.3e}",
            field.name
        )));
    }
    let times = timegrid.nodes();
    let smoothed: Vec<(Vec<f64>, Vec<f64>)> = if alpha == 0.0 {
        Vec::new()
    } else {
        let df = central_time_derivative(f, n, timegrid);
        times
            .par_iter()
            .enumerate()
            .map(|(k, &t)| {
                let sg = WeightedSemigroup::new(field, t, grid, alpha, steps)?;
                Ok((sg.apply(&f[k * n..(k + 1) * n])?, sg.apply(&df[k * n..(k + 1) * n])?))
            })
            .collect::<Result<_>>()?
    };
    let w = trapezoid_weights(timegrid);
    let value = if alpha == 0.0 {
        0.0
    } else {
        let pf: Vec<f64> = smoothed.iter().flat_map(|s| s.0.iter().copied()).collect();
        let d_pf = central_time_derivative(&pf, n, timegrid);
        (0..nt)
            .map(|k| {
                let diff: Vec<f64> = (0..n).map(|i| smoothed[k].1[i] - d_pf[k * n + i]).collect();
                w[k] * grid.inner(&u[k * n..(k + 1) * n], &diff)
            })
            .sum()
    };
    let l2 = |v: &[f64]| (0..nt).map(|k| w[k] * grid.norm(&v[k * n..(k + 1) * n], 2.0).powi(2)).sum::<f64>().sqrt();
    let unit = dt_a * l2(u) * l2(f);
    let c = constants.time * 2.0 / lambda;
    Ok(CommutatorValue { value, bound: c * unit, taylor_term: 0.0, unit_bound: unit, unit_bound_sym: unit })
}

/// Default number of implicit steps for the weighted semigroup in time commutators.
pub const TIME_COMMUTATOR_STEPS: usize = DEFAULT_WEIGHTED_STEPS;

/// Both sides of `int u [P^alpha, T] f = int_0^alpha int P^s u [Laplacian, T] P^(alpha - s) f ds`
/// with composite Simpson in `s` (`panels` even).
pub fn interpolation_identity(
    grid: &Grid,
    op: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    u: &[f64],
    f: &[f64],
    alpha: f64,
    panels: usize,
) -> Result<(f64, f64)> {
    if panels == 0 || panels % 2 == 1 {
        return Err(Error::Precondition("Simpson needs an even number of panels".into()));
    }
    let spec = Spectral::new(grid)?;
    let lhs = {
        let a = spec.heat(&op(f), alpha);
        let b = op(&spec.heat(f, alpha));
        grid.inner(u, &a) - grid.inner(u, &b)
    };
    let h = alpha / panels as f64;
    let rhs: f64 = (0..=panels)
        .into_par_iter()
        .map(|i| {
            let s = i as f64 * h;
            let w = if i == 0 || i == panels { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let ps_u = spec.heat(u, s);
            let g = spec.heat(f, alpha - s);
            let comm: Vec<f64> = spec.laplacian(&op(&g)).iter().zip(op(&spec.laplacian(&g))).map(|(p, q)| p - q).collect();
            w * grid.inner(&ps_u, &comm)
        })
        .sum::<f64>()
        * h
        / 3.0;
    Ok((lhs, rhs))
}

/// The drift operator `g -> b(t) . grad g` on a periodic grid.
pub fn drift_operator(field: &CoefficientField, grid: &Grid, t: f64) -> Result<impl Fn(&[f64]) -> Vec<f64> + Sync> {
    let spec = Spectral::new(grid)?;
    let b = sample_drift(field, t, grid);
    Ok(move |g: &[f64]| drift_apply(&spec, &b, g))
}

/// The operator `g -> a(t) : D^2 g` on a periodic grid.
pub fn diffusion_operator(field: &CoefficientField, grid: &Grid, t: f64) -> Result<impl Fn(&[f64]) -> Vec<f64> + Sync> {
    let spec = Spectral::new(grid)?;
    let a = sample_diffusion(field, t, grid);
    let d = grid.dim;
    Ok(move |g: &[f64]| diffusion_apply(&spec, &a, d, g))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommutatorKind {
    Drift,
    Diffusion,
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutatorSweepResult {
    pub kind: CommutatorKind,
    pub alphas: Vec<f64>,
    pub points: Vec<CommutatorValue>,
    /// Smallest constant for which every point passes.
    pub tightest_constant: f64,
}

impl CommutatorSweepResult {
    fn new(kind: CommutatorKind, alphas: Vec<f64>, points: Vec<CommutatorValue>) -> Self {
        let tightest_constant = points.iter().map(|p| p.tightest_constant()).fold(0.0, f64::max);
        Self { kind, alphas, points, tightest_constant }
    }

    pub fn all_within_bound(&self) -> bool {
        self.points.iter().all(|p| p.passes())
    }

    /// `|value|` at the smallest alpha over the largest `|value|` of the sweep.
    pub fn decay_ratio(&self) -> f64 {
        let max = self.points.iter().map(|p| p.value.abs()).fold(0.0, f64::max);
        let (i, _) = self.alphas.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap_or((0, &0.0));
        if max == 0.0 {
            0.0
        } else {
            self.points[i].value.abs() / max
        }
    }

    /// CSV rows `alpha,value,bound,taylor_term,pass`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,value,bound,taylor_term,pass\n");
        for (a, p) in self.alphas.iter().zip(&self.points) {
            s.push_str(&format!("{a:e},{:e},{:e},{:e},{}\n", p.value, p.bound, p.taylor_term, p.passes()));
        }
        s
    }
}

/// `alpha = 2^-k` for `k` in `from..=to`.
pub fn dyadic_alphas(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn commutator_sweep(
    kind: CommutatorKind,
    field: &CoefficientField,
    grid: &Grid,
    t: f64,
    u: &[f64],
    f: &[f64],
    alphas: &[f64],
    exps: &LebesgueExponents,
    constants: &AuditConstants,
) -> Result<CommutatorSweepResult> {
    let points = alphas
        .par_iter()
        .map(|&alpha| match kind {
            CommutatorKind::Drift => commutator_drift(field, grid, t, u, f, alpha, exps, constants),
            CommutatorKind::Diffusion => commutator_diffusion(field, grid, t, u, f, alpha, exps, constants),
            CommutatorKind::Time => Err(Error::Precondition("use time_commutator_sweep for time commutators".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CommutatorSweepResult::new(kind, alphas.to_vec(), points))
}

pub fn time_commutator_sweep(
    field: &CoefficientField,
    grid: &Grid,
    timegrid: &TimeGrid,
    u: &[f64],
    f: &[f64],
    alphas: &[f64],
    constants: &AuditConstants,
) -> Result<CommutatorSweepResult> {
    let points = alphas
        .iter()
        .map(|&alpha| commutator_time(field, grid, timegrid, u, f, alpha, constants, TIME_COMMUTATOR_STEPS))
        .collect::<Result<Vec<_>>>()?;
    Ok(CommutatorSweepResult::new(CommutatorKind::Time, alphas.to_vec(), points))
}

/// Self-smoothing diffusion commutator `int u [P^alpha, a : D^2] P^alpha u`.
pub fn self_smoothing_diffusion(field: &CoefficientField, grid: &Grid, t: f64, u: &[f64], alpha: f64) -> Result<f64> {
    let spec = Spectral::new(grid)?;
    let f = spec.heat(u, alpha);
    Ok(commutator_diffusion(field, grid, t, u, &f, alpha, &LebesgueExponents::l2(), &AuditConstants::default())?.value)
}

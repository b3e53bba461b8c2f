//! The modulus-of-continuity functional `Psi` and the gauge bookkeeping behind it.
//!
//! Time is rescaled to `[0, 1]`. `Psi` is evaluated as the upper bound
//! `theta(|gamma_0|) + Psi_1(gamma^1) + Psi_2(gamma^2)` for the canonical split into
//! a cumulative drift `gamma^1` and a martingale part `gamma^2`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{carre_du_champ_at, generator_at, CoefficientField, GeneratorScratch};
use crate::testfn::TestFunction;

use super::martingale::Statistic;
use super::PathEnsemble;

/// Largest `n` tried by [`delta_for_epsilon`].
pub const DELTA_SEARCH_LIMIT: u64 = 1_000_000_000;
const LINEAR_SCAN: u64 = 4096;

#[derive(Clone)]
pub struct Gauge {
    pub label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Gauge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Gauge({})", self.label)
    }
}

impl Gauge {
    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), f: Arc::new(f) }
    }

    pub fn power(p: f64) -> Self {
        Self::custom(format!("x^{p}"), move |x: f64| x.abs().powf(p))
    }

    pub fn square() -> Self {
        Self::custom("x^2", |x: f64| x * x)
    }

    /// `min(|x|, 1)`.
    pub fn capped_abs() -> Self {
        Self::custom("min(|x|,1)", |x: f64| x.abs().min(1.0))
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Checks that `Theta(x) / x` increases strictly on a log-spaced sample of `[1, 1e6]`.
    pub fn check_superlinear(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=24 {
            let x = 10f64.powf(k as f64 / 4.0);
            let r = self.eval(x) / x;
            if !(r > prev) {
                return Err(Error::Precondition(format!("gauge {} is not superlinear near x = {x}", self.label)));
            }
            prev = r;
        }
        Ok(())
    }

    /// Largest `Theta(2x) / Theta(x)` on a log-spaced sample of `[1e-3, 1e6]`.
    pub fn doubling_constant(&self) -> f64 {
        (0..=36)
            .map(|k| 10f64.powf(-3.0 + k as f64 / 4.0))
            .filter(|x| self.eval(*x) > 0.0)
            .map(|x| self.eval(2.0 * x) / self.eval(x))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct TightnessProfile {
    pub theta: Gauge,
    pub theta1: Gauge,
    pub theta2: Gauge,
    /// Ladder `eps_m = 2^-m` for `m = 0..=m_max`.
    pub m_max: usize,
}

impl TightnessProfile {
    pub fn new(theta: Gauge, theta1: Gauge, theta2: Gauge, m_max: usize) -> Result<Self> {
        theta1.check_superlinear()?;
        theta2.check_superlinear()?;
        Ok(Self { theta, theta1, theta2, m_max })
    }

    /// `theta = min(|x|, 1)`, `Theta_1 = Theta_2 = x^2`.
    pub fn quadratic(m_max: usize) -> Self {
        Self { theta: Gauge::capped_abs(), theta1: Gauge::square(), theta2: Gauge::square(), m_max }
    }

    pub fn epsilon(m: usize) -> f64 {
        0.5f64.powi(m as i32)
    }
}

/// The `n` of the largest `delta = 1/n` with `Theta(eps^i / delta) delta >= 1 / eps`.
/// The condition is monotone in `n` for convex `Theta` with `Theta(0) = 0`; the
/// search scans linearly, then doubles and bisects.
pub fn delta_for_epsilon(gauge: &Gauge, i: u32, epsilon: f64) -> Result<u64> {
    if !(epsilon > 0.0) || !(i == 1 || i == 2) {
        return Err(Error::Precondition(format!("need epsilon > 0 and i in {{1, 2}}, got {epsilon}, {i}")));
    }
    let target = 1.0 / epsilon;
    let e = epsilon.powi(i as i32);
    let holds = |n: u64| gauge.eval(e * n as f64) / n as f64 >= target;
    if let Some(n) = (1..=LINEAR_SCAN).find(|n| holds(*n)) {
        return Ok(n);
    }
    let mut lo = LINEAR_SCAN;
    let mut hi = LINEAR_SCAN * 2;
    while !holds(hi) {
        if hi >= DELTA_SEARCH_LIMIT {
            return Err(Error::GaugeTooWeak { epsilon, limit: DELTA_SEARCH_LIMIT });
        }
        lo = hi;
        hi = (hi * 2).min(DELTA_SEARCH_LIMIT);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// The `delta`-ladders for both components, stopped early if a gauge is too weak.
fn ladder(profile: &TightnessProfile) -> Result<(Vec<[u64; 2]>, bool)> {
    let mut levels = Vec::new();
    for m in 0..=profile.m_max {
        let eps = TightnessProfile::epsilon(m);
        match (delta_for_epsilon(&profile.theta1, 1, eps), delta_for_epsilon(&profile.theta2, 2, eps)) {
            (Ok(a), Ok(b)) => levels.push([a, b]),
            (Err(Error::GaugeTooWeak { .. }), _) | (_, Err(Error::GaugeTooWeak { .. })) if m > 0 => {
                return Ok((levels, true));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Ok((levels, false))
}

/// Largest block oscillation of the piecewise-linear curve through `gamma`
/// (`M + 1` equispaced nodes on `[0, 1]`) on blocks of length `1/n`, and the
/// distance by which block edges were snapped to nodes.
fn block_oscillation(gamma: &[f64], n: u64) -> (f64, f64) {
    let m = gamma.len() - 1;
    if n as usize > m {
        let slope = gamma.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        return (slope * m as f64 / n as f64, 0.0);
    }
    let n = n as usize;
    let mut worst = 0.0f64;
    let mut snap = 0.0f64;
    let mut start = 0usize;
    for k in 1..=n {
        let exact = k as f64 * m as f64 / n as f64;
        let end = (exact.round() as usize).min(m);
        snap = snap.max((end as f64 - exact).abs() / m as f64);
        let base = gamma[start];
        for g in &gamma[start..=end] {
            worst = worst.max((g - base).abs());
        }
        start = end;
    }
    (worst, snap)
}

struct PsiParts {
    psi: f64,
    inside: Vec<bool>,
    snap: f64,
}

fn psi_upper(theta0: f64, gammas: [&[f64]; 2], levels: &[[u64; 2]]) -> PsiParts {
    let mut psi = theta0;
    let mut inside = Vec::with_capacity(2 * levels.len());
    let mut snap = 0.0f64;
    for (i, gamma) in gammas.iter().enumerate() {
        for (m, lv) in levels.iter().enumerate() {
            let (osc, s) = block_oscillation(gamma, lv[i]);
            snap = snap.max(s);
            let ok = osc <= TightnessProfile::epsilon(m);
            if !ok {
                psi += (m + 1) as f64;
            }
            inside.push(ok);
        }
    }
    PsiParts { psi, inside, snap }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub coordinate: usize,
    /// `n` with `delta_{i, 2^-m} = 1/n`, as `[i = 1, i = 2]` per level `m`.
    pub deltas: Vec<[u64; 2]>,
    pub psi: Vec<f64>,
    /// Membership of `A_i(2^-m)`, at `[(p * 2 + i - 1) * levels + m]`.
    pub membership: Vec<bool>,
    pub mean_psi: Statistic,
    /// Right-hand side of the coercivity estimate.
    pub rhs: Statistic,
    pub snap_distance: f64,
    /// The ladder stopped before `m_max` or some path is still outside `A_i` at the last level.
    pub ladder_truncated: bool,
}

impl ModulusReport {
    pub fn in_set(&self, path: usize, i: usize, m: usize) -> bool {
        self.membership[(path * 2 + i - 1) * self.deltas.len() + m]
    }
}

fn finish(
    coordinate: usize,
    ens: &PathEnsemble,
    deltas: Vec<[u64; 2]>,
    stopped: bool,
    rows: Vec<(PsiParts, f64)>,
) -> ModulusReport {
    let levels = deltas.len();
    let psi: Vec<f64> = rows.iter().map(|r| r.0.psi).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let snap = rows.iter().map(|r| r.0.snap).fold(0.0, f64::max);
    let tail_open = rows.iter().any(|r| !r.0.inside[levels - 1] || !r.0.inside[2 * levels - 1]);
    ModulusReport {
        coordinate,
        psi: psi.clone(),
        membership: rows.into_iter().flat_map(|r| r.0.inside).collect(),
        mean_psi: Statistic::from_samples(&psi, &ens.weights),
        rhs: Statistic::from_samples(&rhs, &ens.weights),
        snap_distance: snap,
        ladder_truncated: stopped || tail_open,
        deltas,
    }
}

/// `Psi` upper bound of coordinate `coordinate` for every path, using the stored
/// drift and martingale increments; the right-hand side uses the drift rate and the
/// stored quadratic-variation compensator.
pub fn modulus_functional(ens: &PathEnsemble, profile: &TightnessProfile, coordinate: usize) -> Result<ModulusReport> {
    if coordinate >= ens.dim {
        return Err(Error::Precondition(format!("coordinate {coordinate} out of range")));
    }
    if ens.steps == 0 {
        return Err(Error::Precondition("need at least one step".into()));
    }
    let (deltas, stopped) = ladder(profile)?;
    let (d, m) = (ens.dim, ens.steps);
    let span = ens.horizon() - ens.start;
    let rows: Vec<(PsiParts, f64)> = (0..ens.n_paths)
        .into_par_iter()
        .map(|p| {
            let (dr, ma, qv) = (ens.drift_increments(p), ens.martingale_increments(p), ens.qv_increments(p));
            let mut g1 = vec![0.0; m + 1];
            let mut g2 = vec![0.0; m + 1];
            let mut rhs = 0.0;
            for k in 0..m {
                let i = k * d + coordinate;
                g1[k + 1] = g1[k] + dr[i];
                g2[k + 1] = g2[k] + ma[i];
                let beta = dr[i] / ens.dt * span;
                let alpha = qv[i] / ens.dt * span;
                rhs += (profile.theta1.eval(beta.abs()) + profile.theta2.eval(alpha)) / m as f64;
            }
            let theta0 = profile.theta.eval(ens.state(p, 0)[coordinate].abs());
            (psi_upper(theta0, [&g1, &g2], &deltas), theta0 + rhs)
        })
        .collect();
    Ok(finish(coordinate, ens, deltas, stopped, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub lhs: Statistic,
    pub rhs: Statistic,
    /// Per-path `rhs - lhs`.
    pub margin: Statistic,
    pub ladder_truncated: bool,
    pub snap_distance: f64,
}

/// Both sides of the coercivity estimate for `phi_t = f(t, X_t)`, with
/// `beta = (d_t + L) f` and `alpha = a(grad f, grad f)` evaluated along the paths.
pub fn tightness_report(
    ens: &PathEnsemble,
    field: &CoefficientField,
    f: &TestFunction,
    profile: &TightnessProfile,
) -> Result<TightnessReport> {
    if ens.steps == 0 {
        return Err(Error::Precondition("need at least one step".into()));
    }
    let (deltas, stopped) = ladder(profile)?;
    let m = ens.steps;
    let span = ens.horizon() - ens.start;
    let rows: Vec<(PsiParts, f64)> = (0..ens.n_paths)
        .into_par_iter()
        .map_init(
            || GeneratorScratch::new(ens.dim),
            |s, p| {
                let mut phi = Vec::with_capacity(m + 1);
                let mut g1 = vec![0.0; m + 1];
                let mut rhs = 0.0;
                for k in 0..=m {
                    let (t, x) = (ens.time(k), ens.state(p, k));
                    phi.push(f.value(t, x));
                    if k < m {
                        let beta = f.time_derivative(t, x) + generator_at(field, f, t, x, s);
                        let alpha = carre_du_champ_at(field, f, t, x, s);
                        g1[k + 1] = g1[k] + beta * ens.dt;
                        rhs += (profile.theta1.eval((beta * span).abs()) + profile.theta2.eval(alpha * span)) / m as f64;
                    }
                }
                let g2: Vec<f64> = (0..=m).map(|k| phi[k] - phi[0] - g1[k]).collect();
                let theta0 = profile.theta.eval(phi[0].abs());
                (psi_upper(theta0, [&g1, &g2], &deltas), theta0 + rhs)
            },
        )
        .collect();
    let margin: Vec<f64> = rows.iter().map(|r| r.1 - r.0.psi).collect();
    let report = finish(0, ens, deltas, stopped, rows);
    Ok(TightnessReport {
        lhs: report.mean_psi,
        rhs: report.rhs,
        margin: Statistic::from_samples(&margin, &ens.weights),
        ladder_truncated: report.ladder_truncated,
        snap_distance: report.snap_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::lagrangian::{simulate_ensemble, InitialLaw};

    #[test]
    fn delta_rule_cases() {
        let sq = Gauge::square();
        assert_eq!(delta_for_epsilon(&sq, 1, 0.5).unwrap(), 8);
        assert_eq!(delta_for_epsilon(&sq, 2, 0.5).unwrap(), 32);
        assert_eq!(delta_for_epsilon(&sq, 1, 2.0).unwrap(), 1);
        // beyond the linear scan: eps^-5 = 2^20
        assert_eq!(delta_for_epsilon(&sq, 2, 1.0 / 16.0).unwrap(), 1 << 20);
        assert!(matches!(delta_for_epsilon(&sq, 2, 1.0 / 128.0), Err(Error::GaugeTooWeak { .. })));
        assert!(delta_for_epsilon(&sq, 3, 0.5).is_err());
    }

    #[test]
    fn gauges() {
        assert!(Gauge::square().check_superlinear().is_ok());
        assert!(Gauge::custom("lin", |x| 3.0 * x).check_superlinear().is_err());
        assert!((Gauge::square().doubling_constant() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_paths_cost_theta_only() {
        let law = InitialLaw::PointMass { x: vec![0.7] };
        let e = simulate_ensemble(&CoefficientField::zero(1), &law, TimeGrid::new(1.0, 16).unwrap(), 3, 0, None).unwrap();
        let r = modulus_functional(&e, &TightnessProfile::quadratic(4), 0).unwrap();
        assert!(r.psi.iter().all(|v| (*v - 0.7).abs() < 1e-15));
        assert!(r.membership.iter().all(|b| *b));
        assert!(!r.ladder_truncated);
    }

    #[test]
    fn single_jump_indicator_sum() {
        // Theta_2 = x^2 gives n = 1, 32, 1024, 32768 on levels 0..3; a jump of 1.5 over
        // one of 1024 steps is outside A_2(2^-m) for m <= 2 and inside at m = 3
        let m = 1024;
        let mut mart = vec![0.0; m];
        mart[300] = 1.5;
        let e = PathEnsemble::from_increments(vec![0.0], vec![0.0; m], mart, vec![0.0; m], 1, TimeGrid::new(1.0, m).unwrap()).unwrap();
        let r = modulus_functional(&e, &TightnessProfile::quadratic(3), 0).unwrap();
        assert_eq!(r.deltas.iter().map(|d| d[1]).collect::<Vec<_>>(), vec![1, 32, 1024, 32768]);
        assert_eq!(r.psi[0], (0..=2).map(|k| (k + 1) as f64).sum::<f64>());
        assert!(r.in_set(0, 2, 3) && !r.in_set(0, 2, 2) && r.in_set(0, 1, 0));
        assert_eq!(r.snap_distance, 0.0);
    }

    #[test]
    fn snapping_is_reported() {
        let gamma: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let (osc, snap) = block_oscillation(&gamma, 3);
        assert!(snap > 0.0 && snap <= 0.05 + 1e-12);
        assert!((osc - 0.4).abs() < 1e-12);
        let (osc, snap) = block_oscillation(&gamma, 20);
        assert_eq!(snap, 0.0);
        assert!((osc - 0.05).abs() < 1e-12);
    }

    #[test]
    fn tightness_matches_modulus_for_coordinate() {
        let law = InitialLaw::PointMass { x: vec![0.0] };
        let field = CoefficientField::heat(1, 1.0);
        let e = simulate_ensemble(&field, &law, TimeGrid::new(1.0, 64).unwrap(), 2000, 4, None).unwrap();
        let profile = TightnessProfile::quadratic(5);
        let a = modulus_functional(&e, &profile, 0).unwrap();
        let b = tightness_report(&e, &field, &TestFunction::coordinate(1, 0), &profile).unwrap();
        assert!((a.mean_psi.value - b.lhs.value).abs() < 1e-12);
        assert!((a.rhs.value - 1.0).abs() < 1e-12 && (b.rhs.value - 1.0).abs() < 1e-12);
        assert!(a.mean_psi.value <= a.rhs.value + 3.0 * a.mean_psi.se);
        let c = tightness_report(&e, &field, &TestFunction::constant(1, 0.3), &profile).unwrap();
        assert!(c.margin.value >= 0.0 && (c.lhs.value - 0.3).abs() < 1e-12);
    }
}

//! Particle ensembles for the SDE `dX = b dt + sqrt(a) dW`, martingale
//! diagnostics and the modulus-of-continuity functional.

mod martingale;
pub mod rng;
mod tightness;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{Boundary, Grid, TimeGrid};
use crate::linalg;

pub use martingale::{
    holder_check, martingale_defect, quadratic_variation_check, HolderReport, Observable, Statistic,
};
pub use tightness::{
    delta_for_epsilon, modulus_functional, tightness_report, Gauge, ModulusReport, TightnessProfile, TightnessReport,
    DELTA_SEARCH_LIMIT,
};

use rng::{step_slot, PathRng};

/// Fraction of paths allowed to leave an absorbing box.
pub const MAX_EXIT_FRACTION: f64 = 0.01;

/// Law of `X_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialLaw {
    PointMass { x: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<f64> },
    /// Piecewise-constant density on the cells of a grid.
    GridDensity { grid: Grid, values: Vec<f64> },
}

enum PreparedLaw<'a> {
    Point(&'a [f64]),
    Gaussian { mean: &'a [f64], root: Vec<f64> },
    Grid { grid: &'a Grid, cdf: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::PointMass { x } => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::GridDensity { grid, .. } => grid.dim,
        }
    }

    fn prepare(&self) -> Result<PreparedLaw<'_>> {
        let d = self.dim();
        Ok(match self {
            InitialLaw::PointMass { x } => PreparedLaw::Point(x),
            InitialLaw::Gaussian { mean, cov } => {
                if cov.len() != d * d {
                    return Err(Error::Precondition("covariance must be d x d".into()));
                }
                PreparedLaw::Gaussian { mean, root: linalg::sqrt_psd(cov, d)? }
            }
            InitialLaw::GridDensity { grid, values } => {
                if values.len() != grid.len() || values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::Precondition("grid density must be nonnegative with one value per node".into()));
                }
                let mut cdf = Vec::with_capacity(values.len());
                let mut acc = 0.0;
                for v in values {
                    acc += v;
                    cdf.push(acc);
                }
                if acc <= 0.0 {
                    return Err(Error::Precondition("grid density has zero mass".into()));
                }
                cdf.iter_mut().for_each(|c| *c /= acc);
                PreparedLaw::Grid { grid, cdf }
            }
        })
    }
}

impl PreparedLaw<'_> {
    /// Draws use slots `[0, d)` of the path stream.
    fn sample(&self, rng: &mut PathRng, out: &mut [f64]) {
        let d = out.len();
        match self {
            PreparedLaw::Point(x) => out.copy_from_slice(x),
            PreparedLaw::Gaussian { mean, root } => {
                let z: Vec<f64> = (0..d).map(|j| rng.normal(j as u64)).collect();
                for i in 0..d {
                    out[i] = mean[i] + (0..d).map(|j| root[i * d + j] * z[j]).sum::<f64>();
                }
            }
            PreparedLaw::Grid { grid, cdf } => {
                let (u, first) = rng.uniforms(0);
                let cell = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
                grid.node(cell, out);
                let h = grid.spacing();
                for (j, x) in out.iter_mut().enumerate() {
                    let v = if j == 0 { first } else { rng.uniforms(j as u64).1 };
                    *x += (v - 0.5) * h;
                }
            }
        }
    }
}

/// `N` paths on `M + 1` time nodes with the Euler-Maruyama drift/martingale split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    pub steps: usize,
    pub start: f64,
    pub dt: f64,
    pub seed: u64,
    /// `states[(p (M+1) + k) d + j]`.
    pub states: Vec<f64>,
    /// `b(t_k, X_k) dt`, laid out as `[(p M + k) d + j]`.
    pub drift: Vec<f64>,
    /// `sqrt(a(t_k, X_k)) dW_k`.
    pub martingale: Vec<f64>,
    /// Compensator of the squared martingale increments, `a^jj(t_k, X_k) dt`.
    pub quadratic_variation: Vec<f64>,
    pub weights: Vec<f64>,
    /// Paths that left an absorbing box (frozen) or wrapped on a periodic one.
    pub exited: Vec<bool>,
    pub domain: Option<Grid>,
}

impl PathEnsemble {
    /// Assemble an ensemble from raw arrays; states are rebuilt from the increments.
    pub fn from_increments(
        initial: Vec<f64>,
        drift: Vec<f64>,
        martingale: Vec<f64>,
        quadratic_variation: Vec<f64>,
        dim: usize,
        timegrid: TimeGrid,
    ) -> Result<Self> {
        let n = initial.len() / dim;
        let m = timegrid.steps;
        if initial.len() != n * dim || drift.len() != n * m * dim || martingale.len() != drift.len() || quadratic_variation.len() != drift.len()
        {
            return Err(Error::Precondition("increment arrays do not match N x M x d".into()));
        }
        let mut states = vec![0.0; n * (m + 1) * dim];
        for p in 0..n {
            for j in 0..dim {
                let mut x = initial[p * dim + j];
                states[p * (m + 1) * dim + j] = x;
                for k in 0..m {
                    let i = (p * m + k) * dim + j;
                    x += drift[i] + martingale[i];
                    states[(p * (m + 1) + k + 1) * dim + j] = x;
                }
            }
        }
        Ok(Self {
            dim,
            n_paths: n,
            steps: m,
            start: 0.0,
            dt: timegrid.dt(),
            seed: 0,
            states,
            drift,
            martingale,
            quadratic_variation,
            weights: vec![1.0 / n as f64; n],
            exited: vec![false; n],
            domain: None,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let i = (p * (self.steps + 1) + k) * self.dim;
        &self.states[i..i + self.dim]
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = (self.steps + 1) * self.dim;
        &self.states[p * w..(p + 1) * w]
    }

    fn increment_range(&self, p: usize) -> std::ops::Range<usize> {
        let w = self.steps * self.dim;
        p * w..(p + 1) * w
    }

    pub fn drift_increments(&self, p: usize) -> &[f64] {
        &self.drift[self.increment_range(p)]
    }

    pub fn martingale_increments(&self, p: usize) -> &[f64] {
        &self.martingale[self.increment_range(p)]
    }

    pub fn qv_increments(&self, p: usize) -> &[f64] {
        &self.quadratic_variation[self.increment_range(p)]
    }

    /// Index of the node at time `t`.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let k = ((t - self.start) / self.dt).round();
        if k < 0.0 || k as usize > self.steps || (self.time(k as usize) - t).abs() > 1e-9 * self.horizon().abs().max(1.0) {
            return Err(Error::Precondition(format!("time {t} is not a node of the ensemble")));
        }
        Ok(k as usize)
    }

    pub fn exit_fraction(&self) -> f64 {
        self.exited.iter().filter(|e| **e).count() as f64 / self.n_paths.max(1) as f64
    }

    /// Largest gap between stored states and `initial + cumulative drift + cumulative martingale`,
    /// measured modulo the period on periodic domains.
    pub fn reconstruction_error(&self) -> f64 {
        let period = self.domain.as_ref().filter(|g| g.is_periodic()).map(|g| 2.0 * g.half_width);
        let mut worst = 0.0f64;
        for p in 0..self.n_paths {
            let (dr, ma) = (self.drift_increments(p), self.martingale_increments(p));
            for j in 0..self.dim {
                let mut x = self.state(p, 0)[j];
                for k in 0..self.steps {
                    x += dr[k * self.dim + j] + ma[k * self.dim + j];
                    let mut gap = x - self.state(p, k + 1)[j];
                    if let Some(w) = period {
                        gap -= w * (gap / w).round();
                    }
                    worst = worst.max(gap.abs());
                }
            }
        }
        worst
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_paths || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Precondition("need one nonnegative weight per path".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Normalization { mean: total });
        }
        self.weights = weights;
        Ok(self)
    }

    /// Weighted histogram density of the marginal at node `k` on the cells of `grid`.
    pub fn marginal_density(&self, k: usize, grid: &Grid) -> Vec<f64> {
        let mut u = vec![0.0; grid.len()];
        let vol = grid.cell_volume();
        for p in 0..self.n_paths {
            if let Some(c) = grid.cell_of(self.state(p, k)) {
                u[c] += self.weights[p] / vol;
            }
        }
        u
    }

    /// Coordinate `j` of the marginal at node `k`, with weights.
    pub fn marginal_coordinate(&self, k: usize, j: usize) -> Vec<(f64, f64)> {
        (0..self.n_paths).map(|p| (self.state(p, k)[j], self.weights[p])).collect()
    }

    /// The paths after node `k`, restarted at time `t_k`, keeping the weights.
    pub fn restrict_from(&self, k: usize) -> Result<Self> {
        if k > self.steps {
            return Err(Error::Precondition(format!("node {k} is past the horizon")));
        }
        let (d, m) = (self.dim, self.steps);
        let rest = m - k;
        let mut out = Self {
            start: self.time(k),
            steps: rest,
            states: Vec::with_capacity(self.n_paths * (rest + 1) * d),
            drift: Vec::with_capacity(self.n_paths * rest * d),
            martingale: Vec::with_capacity(self.n_paths * rest * d),
            quadratic_variation: Vec::with_capacity(self.n_paths * rest * d),
            ..self.clone_header()
        };
        for p in 0..self.n_paths {
            out.states.extend_from_slice(&self.path(p)[k * d..]);
            out.drift.extend_from_slice(&self.drift_increments(p)[k * d..]);
            out.martingale.extend_from_slice(&self.martingale_increments(p)[k * d..]);
            out.quadratic_variation.extend_from_slice(&self.qv_increments(p)[k * d..]);
        }
        Ok(out)
    }

    fn clone_header(&self) -> Self {
        Self {
            dim: self.dim,
            n_paths: self.n_paths,
            steps: self.steps,
            start: self.start,
            dt: self.dt,
            seed: self.seed,
            states: Vec::new(),
            drift: Vec::new(),
            martingale: Vec::new(),
            quadratic_variation: Vec::new(),
            weights: self.weights.clone(),
            exited: self.exited.clone(),
            domain: self.domain.clone(),
        }
    }
}

/// Euler-Maruyama ensemble. Normals come from a counter-based stream keyed by
/// `(seed, path, step, coordinate)`, so the result does not depend on scheduling.
/// With a `domain`, paths leaving an absorbing box are frozen and flagged (more than
/// 1% is an error) and paths on a periodic box are wrapped.
pub fn simulate_ensemble(
    field: &CoefficientField,
    initial: &InitialLaw,
    timegrid: TimeGrid,
    n_paths: usize,
    seed: u64,
    domain: Option<&Grid>,
) -> Result<PathEnsemble> {
    let d = field.dim();
    if n_paths == 0 {
        return Err(Error::Precondition("need at least one path".into()));
    }
    if initial.dim() != d || domain.is_some_and(|g| g.dim != d) {
        return Err(Error::Precondition("dimension mismatch between field, initial law and domain".into()));
    }
    let law = initial.prepare()?;
    let m = timegrid.steps;
    let dt = timegrid.dt();
    let sdt = dt.sqrt();
    let mut states = vec![0.0; n_paths * (m + 1) * d];
    let mut drift = vec![0.0; n_paths * m * d];
    let mut mart = vec![0.0; n_paths * m * d];
    let mut qv = vec![0.0; n_paths * m * d];
    let mut exited = vec![false; n_paths];
    states
        .par_chunks_mut((m + 1) * d)
        .zip(drift.par_chunks_mut(m * d))
        .zip(mart.par_chunks_mut(m * d))
        .zip(qv.par_chunks_mut(m * d))
        .zip(exited.par_iter_mut())
        .enumerate()
        .try_for_each(|(p, ((((xs, dr), ma), q), flag))| -> Result<()> {
            let mut rng = PathRng::new(seed, p as u64);
            law.sample(&mut rng, &mut xs[..d]);
            if let Some(g) = domain {
                if g.is_periodic() {
                    g.wrap(&mut xs[..d]);
                }
            }
            let (mut a, mut b, mut sigma, mut z) = (vec![0.0; d * d], vec![0.0; d], vec![0.0; d * d], vec![0.0; d]);
            let mut frozen = false;
            for k in 0..m {
                let (head, tail) = xs.split_at_mut((k + 1) * d);
                let x = &head[k * d..];
                let next = &mut tail[..d];
                if frozen {
                    next.copy_from_slice(x);
                    continue;
                }
                let t = timegrid.node(k);
                field.diffusion(t, x, &mut a);
                field.drift(t, x, &mut b);
                linalg::sqrt_psd_into(&a, d, &mut sigma)?;
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = rng.normal(step_slot(k, j, d));
                }
                for j in 0..d {
                    let i = k * d + j;
                    dr[i] = b[j] * dt;
                    ma[i] = sdt * (0..d).map(|l| sigma[j * d + l] * z[l]).sum::<f64>();
                    q[i] = a[j * d + j] * dt;
                    next[j] = x[j] + dr[i] + ma[i];
                }
                if let Some(g) = domain {
                    if !g.contains(next) {
                        *flag = true;
                        if g.is_periodic() {
                            g.wrap(next);
                        } else {
                            next.copy_from_slice(x);
                            dr[k * d..(k + 1) * d].fill(0.0);
                            ma[k * d..(k + 1) * d].fill(0.0);
                            q[k * d..(k + 1) * d].fill(0.0);
                            frozen = true;
                        }
                    }
                }
            }
            Ok(())
        })?;
    let ensemble = PathEnsemble {
        dim: d,
        n_paths,
        steps: m,
        start: 0.0,
        dt,
        seed,
        states,
        drift,
        martingale: mart,
        quadratic_variation: qv,
        weights: vec![1.0 / n_paths as f64; n_paths],
        exited,
        domain: domain.cloned(),
    };
    if domain.is_some_and(|g| g.boundary == Boundary::Absorbing) && ensemble.exit_fraction() > MAX_EXIT_FRACTION {
        return Err(Error::PathsLeftDomain {
            flagged: ensemble.exited.iter().filter(|e| **e).count(),
            total: n_paths,
        });
    }
    Ok(ensemble)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tg(t: f64, m: usize) -> TimeGrid {
        TimeGrid::new(t, m).unwrap()
    }

    #[test]
    fn zero_field_paths_are_constant() {
        let law = InitialLaw::Gaussian { mean: vec![0.0, 1.0], cov: vec![1.0, 0.0, 0.0, 2.0] };
        let e = simulate_ensemble(&CoefficientField::zero(2), &law, tg(1.0, 10), 50, 3, None).unwrap();
        for p in 0..50 {
            for k in 0..=10 {
                assert_eq!(e.state(p, k), e.state(p, 0));
            }
        }
    }

    #[test]
    fn constant_drift_is_exact() {
        let law = InitialLaw::PointMass { x: vec![0.5] };
        let e = simulate_ensemble(&CoefficientField::linear_drift(vec![2.0], 0.0), &law, tg(1.0, 8), 4, 1, None).unwrap();
        for k in 0..=8 {
            assert!((e.state(2, k)[0] - (0.5 + 2.0 * e.time(k))).abs() < 1e-14);
        }
        assert!(e.reconstruction_error() < 1e-12);
    }

    #[test]
    fn brownian_variance() {
        let law = InitialLaw::PointMass { x: vec![0.0, 0.0] };
        let n = 100_000;
        let e = simulate_ensemble(&CoefficientField::heat(2, 1.0), &law, tg(0.5, 5), n, 11, None).unwrap();
        for j in 0..2 {
            let xs: Vec<f64> = (0..n).map(|p| e.state(p, 5)[j]).collect();
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            // the sample second moment of N(0, t) has standard error t sqrt(2/N)
            let se = 0.5 * (2.0 / n as f64).sqrt();
            assert!((var - 0.5).abs() < 4.0 * se, "{var}");
        }
    }

    #[test]
    fn reproducible_and_order_independent() {
        let law = InitialLaw::Gaussian { mean: vec![0.0], cov: vec![1.0] };
        let f = CoefficientField::ou(1, 1.0, 2.0);
        let a = simulate_ensemble(&f, &law, tg(1.0, 16), 200, 42, None).unwrap();
        let b = simulate_ensemble(&f, &law, tg(1.0, 16), 200, 42, None).unwrap();
        assert_eq!(a, b);
        let small = simulate_ensemble(&f, &law, tg(1.0, 16), 50, 42, None).unwrap();
        assert_eq!(small.path(49), a.path(49));
        assert!(a.reconstruction_error() < 1e-12);
        assert_ne!(simulate_ensemble(&f, &law, tg(1.0, 16), 200, 43, None).unwrap().states, a.states);
    }

    #[test]
    fn absorbing_exits_are_flagged() {
        let g = Grid::absorbing_1d(1.0, 32).unwrap();
        let law = InitialLaw::PointMass { x: vec![0.0] };
        let err = simulate_ensemble(&CoefficientField::heat(1, 2.0), &law, tg(1.0, 50), 100, 0, Some(&g)).unwrap_err();
        assert!(matches!(err, Error::PathsLeftDomain { .. }));
        let wide = Grid::absorbing_1d(20.0, 32).unwrap();
        let e = simulate_ensemble(&CoefficientField::heat(1, 2.0), &law, tg(1.0, 50), 100, 0, Some(&wide)).unwrap();
        assert_eq!(e.exit_fraction(), 0.0);
        let per = Grid::periodic_1d(1.0, 32).unwrap();
        let e = simulate_ensemble(&CoefficientField::heat(1, 2.0), &law, tg(1.0, 50), 100, 0, Some(&per)).unwrap();
        assert!(e.states.iter().all(|x| x.abs() <= 1.0));
        assert!(e.reconstruction_error() < 1e-12);
    }

    #[test]
    fn grid_density_initial_law() {
        let g = Grid::absorbing_1d(2.0, 8).unwrap();
        let mut values = vec![0.0; 8];
        values[5] = 1.0;
        let law = InitialLaw::GridDensity { grid: g.clone(), values };
        let e = simulate_ensemble(&CoefficientField::zero(1), &law, tg(1.0, 2), 1000, 5, None).unwrap();
        let h = e.marginal_density(2, &g);
        assert!((g.integrate(&h) - 1.0).abs() < 1e-12);
        assert!((h[5] * g.cell_volume() - 1.0).abs() < 1e-12);
        assert_eq!(e.marginal_density(0, &g), h);
    }

    #[test]
    fn restriction_keeps_tail() {
        let law = InitialLaw::PointMass { x: vec![0.0] };
        let e = simulate_ensemble(&CoefficientField::heat(1, 1.0), &law, tg(1.0, 10), 20, 9, None).unwrap();
        let r = e.restrict_from(4).unwrap();
        assert_eq!(r.steps, 6);
        assert!((r.start - 0.4).abs() < 1e-15);
        assert_eq!(r.state(3, 0), e.state(3, 4));
        assert_eq!(r.state(3, 6), e.state(3, 10));
        assert!(r.reconstruction_error() < 1e-12);
        assert_eq!(e.restrict_from(0).unwrap(), e);
        assert_eq!(e.restrict_from(10).unwrap().steps, 0);
    }
}

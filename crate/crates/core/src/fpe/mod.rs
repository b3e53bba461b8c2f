//! Eulerian side: the Fokker-Planck equation `d_t u = L^* u`, its backward
//! Kolmogorov dual, and weak-formulation residuals.

mod backward;
mod operator;
mod residual;
mod solve;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, TimeGrid};

pub use backward::{solve_backward_kolmogorov, BackwardSolution};
pub use operator::{assemble_operator, OperatorPlan};
pub use residual::{weak_form_residual, Endpoints};
pub use solve::solve_fpe;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Forward Euler with automatic sub-stepping.
    Explicit,
    /// Backward Euler on the same flux operator.
    SemiImplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpeOptions {
    pub scheme: Scheme,
    /// Fraction of the positivity limit used by explicit sub-steps.
    pub cfl: f64,
    /// Largest number of explicit sub-steps allowed per time step.
    pub max_substeps: usize,
    /// Largest mass allowed in the outer band of an absorbing box, relative to the initial mass.
    pub boundary_mass_tol: f64,
    /// Largest mass the positivity clamp may remove, relative to the initial mass.
    pub clamp_tol: f64,
    /// Cap on the monitored C2 norm of backward solutions.
    pub c2_cap: f64,
    pub solver_tol: f64,
}

impl Default for FpeOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Explicit,
            cfl: 0.9,
            max_substeps: 100_000,
            boundary_mass_tol: 1e-6,
            clamp_tol: 1e-8,
            c2_cap: 1e8,
            solver_tol: 1e-14,
        }
    }
}

impl FpeOptions {
    pub fn with_scheme(scheme: Scheme) -> Self {
        Self { scheme, ..Self::default() }
    }
}

/// Per-step solver diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub min: f64,
    pub clamped: f64,
    pub substeps: usize,
    pub boundary_mass: f64,
}

/// Nonnegative grid densities `u[t_k]` at every node of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityCurve {
    pub grid: Grid,
    pub timegrid: TimeGrid,
    /// Time-major values, `(steps + 1) * grid.len()`.
    pub values: Vec<f64>,
    pub mass: Vec<f64>,
    /// Total mass removed by the positivity clamp.
    pub clamped_mass: f64,
    pub log: Vec<StepLog>,
}

impl DensityCurve {
    pub fn from_values(grid: Grid, timegrid: TimeGrid, values: Vec<f64>) -> Self {
        let len = grid.len();
        assert_eq!(values.len(), (timegrid.steps + 1) * len, "curve size mismatch");
        let mass = values.chunks(len).map(|u| grid.integrate(u)).collect();
        Self { grid, timegrid, values, mass, clamped_mass: 0.0, log: Vec::new() }
    }

    /// Sample a closed-form density `u(t, x)` at every node.
    pub fn from_fn(grid: Grid, timegrid: TimeGrid, u: impl Fn(f64, &[f64]) -> f64) -> Self {
        let mut values = Vec::with_capacity((timegrid.steps + 1) * grid.len());
        for t in timegrid.nodes() {
            values.extend(grid.sample(|x| u(t, x)));
        }
        Self::from_values(grid, timegrid, values)
    }

    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[k * len..(k + 1) * len]
    }

    pub fn final_density(&self) -> &[f64] {
        self.at(self.timegrid.steps)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest relative mass drift over the curve.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE)
    }

    /// `L^1` distance at time node `k` to a closed-form density.
    pub fn l1_error(&self, k: usize, exact: impl Fn(&[f64]) -> f64) -> f64 {
        let ex = self.grid.sample(exact);
        self.grid.norm(&self.at(k).iter().zip(&ex).map(|(a, b)| a - b).collect::<Vec<_>>(), 1.0)
    }
}

/// Density of `N(mean, var I)` in dimension `x.len()`.
pub fn gaussian_density(x: &[f64], mean: f64, var: f64) -> f64 {
    let d = x.len() as f64;
    let r2: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (-0.5 * r2 / var).exp() / (2.0 * std::f64::consts::PI * var).powf(d / 2.0)
}

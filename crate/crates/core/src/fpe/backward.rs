//! Backward Kolmogorov equation `d_t f = -L_t f + g`, discretized as the exact
//! transpose of the forward scheme so that the discrete duality
//! `<f_0, u_0> + sum dt <g, u> = <f_T, u_T>` holds to roundoff.

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{Grid, TimeGrid};
use crate::testfn::TestFunction;

use super::operator::OperatorPlan;
use super::solve::{implicit_solve, mul_add};
use super::{FpeOptions, Scheme};

#[derive(Clone, Debug)]
pub struct BackwardSolution {
    pub grid: Grid,
    pub timegrid: TimeGrid,
    /// Time-major node values of `f`.
    pub values: Vec<f64>,
    /// Monitored `sup|f| + sup|grad f| + sup|D^2 f|` at each time node.
    pub c2_norms: Vec<f64>,
}

impl BackwardSolution {
    pub fn at(&self, k: usize) -> &[f64] {
        let len = self.grid.len();
        &self.values[k * len..(k + 1) * len]
    }
}

/// Finite-difference `C^2` size of a grid function (interior stencils only).
pub(crate) fn c2_norm(grid: &Grid, f: &[f64]) -> f64 {
    let d = grid.dim;
    let h = grid.spacing();
    let mut s0 = 0.0f64;
    let mut s1 = 0.0f64;
    let mut s2 = 0.0f64;
    for p in 0..grid.len() {
        s0 = s0.max(f[p].abs());
        for i in 0..d {
            let (Some(l), Some(r)) = (grid.neighbor(p, i, -1), grid.neighbor(p, i, 1)) else {
                continue;
            };
            s1 = s1.max(((f[r] - f[l]) / (2.0 * h)).abs());
            s2 = s2.max(((f[r] - 2.0 * f[p] + f[l]) / (h * h)).abs());
            for j in 0..i {
                let corner = |a: usize, o: isize| grid.neighbor(a, j, o);
                if let (Some(rr), Some(rl), Some(lr), Some(ll)) = (corner(r, 1), corner(r, -1), corner(l, 1), corner(l, -1)) {
                    s2 = s2.max(((f[rr] - f[rl] - f[lr] + f[ll]) / (4.0 * h * h)).abs());
                }
            }
        }
    }
    s0 + s1 + s2
}

fn sample_g(grid: &Grid, g: &TestFunction, t: f64, out: &mut [f64]) {
    let mut x = vec![0.0; grid.dim];
    for (p, o) in out.iter_mut().enumerate() {
        grid.node(p, &mut x);
        *o = g.value(t, &x);
    }
}

/// Solve backward from `f_T` on the time grid, using the same operators and
/// sub-steps as [`super::solve_fpe`] with identical options.
pub fn solve_backward_kolmogorov(
    field: &CoefficientField,
    g: &TestFunction,
    f_terminal: &[f64],
    timegrid: &TimeGrid,
    grid: &Grid,
    options: &FpeOptions,
) -> Result<BackwardSolution> {
    let len = grid.len();
    if f_terminal.len() != len {
        return Err(Error::Precondition("terminal value has the wrong size".into()));
    }
    let steps = timegrid.steps;
    let mut plan = OperatorPlan::new(field, grid, *timegrid, options);
    let mut values = vec![0.0; (steps + 1) * len];
    let mut c2 = vec![0.0; steps + 1];
    let mut f = f_terminal.to_vec();
    values[steps * len..].copy_from_slice(&f);
    c2[steps] = c2_norm(grid, &f);
    let mut next = vec![0.0; len];
    let (mut g0, mut gm, mut g1) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for k in (0..steps).rev() {
        let (a, substeps) = plan.step(k)?;
        let at = a.transpose();
        let t0 = timegrid.node(k);
        match options.scheme {
            Scheme::Explicit => {
                let tau = timegrid.dt() / substeps as f64;
                for j in (0..substeps).rev() {
                    let (s0, s1) = (t0 + j as f64 * tau, t0 + (j + 1) as f64 * tau);
                    sample_g(grid, g, s0, &mut g0);
                    sample_g(grid, g, 0.5 * (s0 + s1), &mut gm);
                    sample_g(grid, g, s1, &mut g1);
                    mul_add(&at, &f, tau, &mut next);
                    for p in 0..len {
                        f[p] = next[p] - tau * (g0[p] + 4.0 * gm[p] + g1[p]) / 6.0;
                    }
                }
            }
            Scheme::SemiImplicit => {
                let dt = timegrid.dt();
                let t1 = timegrid.node(k + 1);
                sample_g(grid, g, t0, &mut g0);
                sample_g(grid, g, 0.5 * (t0 + t1), &mut gm);
                sample_g(grid, g, t1, &mut g1);
                let y = implicit_solve(&at, grid, dt, &f, options.solver_tol)?;
                for p in 0..len {
                    f[p] = y[p] - dt * (g0[p] + 4.0 * gm[p] + g1[p]) / 6.0;
                }
            }
        }
        let norm = c2_norm(grid, &f);
        if !(norm <= options.c2_cap) {
            return Err(Error::Instability { norm, cap: options.c2_cap, time: t0 });
        }
        c2[k] = norm;
        values[k * len..(k + 1) * len].copy_from_slice(&f);
    }
    Ok(BackwardSolution { grid: grid.clone(), timegrid: *timegrid, values, c2_norms: c2 })
}

//! Weak-formulation residual of a density curve.

use crate::error::{Error, Result};
use crate::fields::{generator_at, CoefficientField, GeneratorScratch};
use crate::testfn::TestFunction;

use super::DensityCurve;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoints {
    /// `f` is compactly supported in `(0, T)`; no boundary terms.
    Exclude,
    /// Subtract `int f_T dnu_T - int f_0 dnu_0`.
    Include,
}

/// Time-quadrature weights on `steps + 1` nodes: Simpson for even step counts,
/// trapezoid otherwise.
pub(crate) fn time_weights(steps: usize, dt: f64) -> Vec<f64> {
    let mut w = vec![0.0; steps + 1];
    if steps.is_multiple_of(2) {
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            } * dt
                / 3.0;
        }
    } else {
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = if k == 0 || k == steps { 0.5 } else { 1.0 } * dt;
        }
    }
    w
}

/// `int_0^T int (d_t f + L f) dnu_t dt`, minus the endpoint terms when requested.
pub fn weak_form_residual(nu: &DensityCurve, field: &CoefficientField, f: &TestFunction, endpoints: Endpoints) -> Result<f64> {
    let grid = &nu.grid;
    if let Some(r) = f.support_radius {
        if r > grid.half_width {
            return Err(Error::Support { radius: r, half_width: grid.half_width });
        }
    }
    let d = grid.dim;
    let tg = &nu.timegrid;
    let weights = time_weights(tg.steps, tg.dt());
    let mut x = vec![0.0; d];
    let mut s = GeneratorScratch::new(d);
    let mut total = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let t = tg.node(k);
        let u = nu.at(k);
        let mut inner = 0.0;
        for (p, up) in u.iter().enumerate() {
            if *up == 0.0 {
                continue;
            }
            grid.node(p, &mut x);
            inner += (f.time_derivative(t, &x) + generator_at(field, f, t, &x, &mut s)) * up;
        }
        total += w * inner * grid.cell_volume();
    }
    if endpoints == Endpoints::Include {
        let end = |k: usize| -> f64 {
            let t = tg.node(k);
            let mut x = vec![0.0; d];
            nu.at(k)
                .iter()
                .enumerate()
                .map(|(p, up)| {
                    grid.node(p, &mut x);
                    f.value(t, &x) * up
                })
                .sum::<f64>()
                * grid.cell_volume()
        };
        total -= end(tg.steps) - end(0);
    }
    Ok(total)
}

//! Finite-volume discretization of `L^*` with Scharfetter-Gummel (Chang-Cooper)
//! weighted fluxes along each axis and central mixed terms.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{Grid, TimeGrid};
use crate::linalg::CsrMatrix;

use super::{FpeOptions, Scheme};

/// `z / (e^z - 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Coefficients `(alpha, beta)` of the face flux `J = alpha u_left - beta u_right`
/// for `J = B u - D du/dx`.
#[inline]
pub(crate) fn face_weights(big_b: f64, big_d: f64, h: f64) -> (f64, f64) {
    if big_d <= 0.0 {
        (big_b.max(0.0), (-big_b).max(0.0))
    } else {
        let w = big_b * h / big_d;
        (big_d / h * bernoulli(-w), big_d / h * bernoulli(w))
    }
}

/// Assemble the matrix `A` with `du/dt = A u` at time `t`.
pub fn assemble_operator(field: &CoefficientField, grid: &Grid, t: f64) -> CsrMatrix {
    let d = grid.dim;
    let h = grid.spacing();
    let periodic = grid.is_periodic();
    let chunks: Vec<Vec<(usize, usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; d], vec![0.0; d], vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d]),
            |(xp, y, ap, aq, b), p| {
                let mut trip = Vec::with_capacity(8 * d * d);
                grid.node(p, xp);
                field.diffusion(t, xp, ap);
                for i in 0..d {
                    let ip = grid.axis_index(p, i);
                    // face between p and its +e_i neighbour (or the ghost beyond the edge)
                    let q = grid.neighbor(p, i, 1);
                    y.copy_from_slice(xp);
                    y[i] += h;
                    field.diffusion(t, y, aq);
                    y[i] -= 0.5 * h;
                    field.drift(t, y, b);
                    let bb = b[i] - 0.5 * (aq[i * d + i] - ap[i * d + i]) / h;
                    let dd = 0.25 * (ap[i * d + i] + aq[i * d + i]);
                    let (alpha, beta) = face_weights(bb, dd, h);
                    trip.push((p, p, -alpha / h));
                    if let Some(q) = q {
                        trip.push((p, q, beta / h));
                        trip.push((q, p, alpha / h));
                        trip.push((q, q, -beta / h));
                        if d > 1 {
                            mixed_terms(field, grid, t, p, q, i, &mut trip, y);
                        }
                    }
                    if !periodic && ip == 0 {
                        // face between the ghost below the box and p: only outflow to the left
                        y.copy_from_slice(xp);
                        y[i] -= h;
                        field.diffusion(t, y, aq);
                        y[i] += 0.5 * h;
                        field.drift(t, y, b);
                        let bb = b[i] - 0.5 * (ap[i * d + i] - aq[i * d + i]) / h;
                        let dd = 0.25 * (ap[i * d + i] + aq[i * d + i]);
                        let (_, beta) = face_weights(bb, dd, h);
                        trip.push((p, p, -beta / h));
                    }
                }
                trip
            },
        )
        .collect();
    CsrMatrix::from_triplets(grid.len(), chunks.into_iter().flatten().collect())
}

/// Flux contribution `-1/2 sum_{j != i} d_j(a^ij u)` on the face `(p, q)` along axis `i`.
#[allow(clippy::too_many_arguments)]
fn mixed_terms(
    field: &CoefficientField,
    grid: &Grid,
    t: f64,
    p: usize,
    q: usize,
    i: usize,
    trip: &mut Vec<(usize, usize, f64)>,
    y: &mut [f64],
) {
    let d = grid.dim;
    let h = grid.spacing();
    let mut a = vec![0.0; d * d];
    for j in 0..d {
        if j == i {
            continue;
        }
        // average of the central differences at both cells of the face
        for node in [p, q] {
            for (o, s) in [(1isize, 1.0), (-1isize, -1.0)] {
                if let Some(k) = grid.neighbor(node, j, o) {
                    grid.node(k, y);
                    field.diffusion(t, y, &mut a);
                    let c = -s * a[i * d + j] / (8.0 * h);
                    trip.push((p, k, -c / h));
                    trip.push((q, k, c / h));
                }
            }
        }
    }
}

/// Operators and sub-step counts for each time step, shared by the forward and
/// backward solvers so that both use the same discrete evolution.
pub struct OperatorPlan<'a> {
    field: &'a CoefficientField,
    grid: &'a Grid,
    timegrid: TimeGrid,
    options: FpeOptions,
    cached: Option<(Arc<CsrMatrix>, usize)>,
}

impl<'a> OperatorPlan<'a> {
    pub fn new(field: &'a CoefficientField, grid: &'a Grid, timegrid: TimeGrid, options: &FpeOptions) -> Self {
        Self { field, grid, timegrid, options: options.clone(), cached: None }
    }

    fn substeps(&self, a: &CsrMatrix) -> Result<usize> {
        if self.options.scheme == Scheme::SemiImplicit {
            return Ok(1);
        }
        let rate = a.diagonal().iter().fold(0.0f64, |m, v| m.max(-v));
        let needed = ((self.timegrid.dt() * rate / self.options.cfl).ceil() as usize).max(1);
        if needed > self.options.max_substeps {
            return Err(Error::SubstepCap { needed, cap: self.options.max_substeps });
        }
        Ok(needed)
    }

    /// Operator frozen at the start of step `k` and the number of sub-steps.
    pub fn step(&mut self, k: usize) -> Result<(Arc<CsrMatrix>, usize)> {
        if !self.field.time_dependent {
            if let Some(c) = &self.cached {
                return Ok(c.clone());
            }
        }
        let a = Arc::new(assemble_operator(self.field, self.grid, self.timegrid.node(k)));
        let s = self.substeps(&a)?;
        if !self.field.time_dependent {
            self.cached = Some((a.clone(), s));
        }
        Ok((a, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn columns_sum_to_zero_on_periodic_grids() {
        let g = Grid::new(2, 3.0, 12, Boundary::Periodic).unwrap();
        let f = CoefficientField::from_fns(
            "aniso",
            2,
            |_, x, a| {
                a[0] = 1.0 + 0.3 * x[0].cos();
                a[1] = 0.2 * x[1].sin();
                a[2] = a[1];
                a[3] = 1.2;
            },
            |_, x, b| {
                b[0] = x[1].sin();
                b[1] = -0.5 * x[0].cos();
            },
        );
        let a = assemble_operator(&f, &g, 0.0);
        let t = a.transpose();
        let ones = vec![1.0; g.len()];
        let mut s = vec![0.0; g.len()];
        t.mul_vec(&ones, &mut s);
        assert!(s.iter().all(|v| v.abs() < 1e-10), "{:?}", s.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn one_dimensional_operator_is_metzler() {
        let g = Grid::absorbing_1d(4.0, 50).unwrap();
        let a = assemble_operator(&CoefficientField::ou(1, 3.0, 0.1), &g, 0.0);
        for i in 0..a.n {
            assert_eq!(a.negative_offdiag(i), 0.0);
        }
        let pure = assemble_operator(&CoefficientField::linear_drift(vec![1.5], 0.0), &g, 0.0);
        for i in 0..pure.n {
            assert_eq!(pure.negative_offdiag(i), 0.0);
        }
    }

    #[test]
    fn bernoulli_limits() {
        assert!((bernoulli(0.0) - 1.0).abs() < 1e-15);
        assert!((bernoulli(1e-9) - (1.0 - 5e-10)).abs() < 1e-15);
        assert!(bernoulli(800.0) == 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-9);
        let (a, b) = face_weights(2.0, 0.0, 0.1);
        assert_eq!((a, b), (2.0, 0.0));
    }
}

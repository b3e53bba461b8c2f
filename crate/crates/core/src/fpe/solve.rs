//! Forward Fokker-Planck time stepping.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grid::{Grid, TimeGrid};
use crate::linalg::{self, CsrMatrix};

use super::operator::OperatorPlan;
use super::{DensityCurve, FpeOptions, Scheme, StepLog};

pub(crate) fn mul_add(a: &CsrMatrix, x: &[f64], tau: f64, out: &mut [f64]) {
    let body = |(i, o): (usize, &mut f64)| {
        let mut s = 0.0;
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            s += a.val[p] * x[a.col[p]];
        }
        *o = x[i] + tau * s;
    };
    if a.n >= 1 << 14 {
        out.par_iter_mut().enumerate().for_each(body);
    } else {
        out.iter_mut().enumerate().for_each(body);
    }
}

/// Solve `(I - dt A) x = rhs`, directly in one dimension and by BiCGSTAB otherwise.
pub(crate) fn implicit_solve(a: &CsrMatrix, grid: &Grid, dt: f64, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let m = a.identity_plus(-dt);
    if grid.dim == 1 {
        let n = m.n;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                let c = m.col[p];
                let v = m.val[p];
                if c == i {
                    diag[i] += v;
                } else if c == (i + n - 1) % n {
                    lower[i] += v;
                } else if c == (i + 1) % n {
                    upper[i] += v;
                }
            }
        }
        let x = if grid.is_periodic() && n > 2 {
            linalg::solve_cyclic_tridiagonal(&lower, &diag, &upper, rhs)
        } else {
            lower[0] = 0.0;
            upper[n - 1] = 0.0;
            linalg::solve_tridiagonal(&lower, &diag, &upper, rhs)
        };
        return Ok(x);
    }
    let mut x = rhs.to_vec();
    linalg::bicgstab(&m, rhs, &mut x, tol, 10_000)?;
    Ok(x)
}

/// Solve `d_t u = -div(b u) + 1/2 sum_ij d_i d_j (a^ij u)` from `u0` on `grid`.
pub fn solve_fpe(
    field: &CoefficientField,
    u0: &[f64],
    timegrid: &TimeGrid,
    grid: &Grid,
    options: &FpeOptions,
) -> Result<DensityCurve> {
    let len = grid.len();
    if u0.len() != len {
        return Err(Error::Precondition(format!("initial density has {} values for {len} nodes", u0.len())));
    }
    if field.dim() != grid.dim {
        return Err(Error::Precondition("field and grid dimensions differ".into()));
    }
    if let Some(v) = u0.iter().find(|v| !(**v >= -1e-12)) {
        return Err(Error::Precondition(format!("initial density must be nonnegative, found {v}")));
    }
    let mass0 = grid.integrate(u0);
    let monitor = !grid.is_periodic();
    let band_tol = options.boundary_mass_tol * mass0.abs().max(f64::MIN_POSITIVE);
    if monitor {
        let bm = grid.boundary_mass(u0);
        if bm > band_tol {
            return Err(Error::DomainTooSmall(format!("initial boundary mass {bm:e} exceeds {band_tol:e}")));
        }
    }
    let mut plan = OperatorPlan::new(field, grid, *timegrid, options);
    let mut values = Vec::with_capacity((timegrid.steps + 1) * len);
    let mut u: Vec<f64> = u0.iter().map(|v| v.max(0.0)).collect();
    values.extend_from_slice(&u);
    let mut next = vec![0.0; len];
    let mut clamped_total = 0.0;
    let mut log = Vec::with_capacity(timegrid.steps);
    let vol = grid.cell_volume();
    for k in 0..timegrid.steps {
        let (a, substeps) = plan.step(k)?;
        let mut clamped = 0.0;
        match options.scheme {
            Scheme::Explicit => {
                let tau = timegrid.dt() / substeps as f64;
                for _ in 0..substeps {
                    mul_add(&a, &u, tau, &mut next);
                    std::mem::swap(&mut u, &mut next);
                    for v in u.iter_mut() {
                        if *v < 0.0 {
                            clamped -= *v;
                            *v = 0.0;
                        }
                    }
                }
            }
            Scheme::SemiImplicit => {
                u = implicit_solve(&a, grid, timegrid.dt(), &u, options.solver_tol)?;
                for v in u.iter_mut() {
                    if *v < 0.0 {
                        clamped -= *v;
                        *v = 0.0;
                    }
                }
            }
        }
        clamped *= vol;
        clamped_total += clamped;
        if clamped_total > options.clamp_tol * mass0.abs() {
            return Err(Error::ClampExceeded { clamped: clamped_total, total: mass0 });
        }
        let boundary_mass = if monitor { grid.boundary_mass(&u) } else { 0.0 };
        if boundary_mass > band_tol {
            return Err(Error::DomainTooSmall(format!(
                "boundary mass {boundary_mass:e} exceeds {band_tol:e} at t = {}",
                timegrid.node(k + 1)
            )));
        }
        log.push(StepLog {
            step: k + 1,
            time: timegrid.node(k + 1),
            mass: grid.integrate(&u),
            min: u.iter().copied().fold(f64::INFINITY, f64::min),
            clamped,
            substeps,
            boundary_mass,
        });
        values.extend_from_slice(&u);
    }
    let mut curve = DensityCurve::from_values(grid.clone(), *timegrid, values);
    curve.clamped_mass = clamped_total;
    curve.log = log;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpe::gaussian_density;

    #[test]
    fn zero_field_is_stationary() {
        let g = Grid::absorbing_1d(5.0, 64).unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 0.5));
        let c = solve_fpe(&CoefficientField::zero(1), &u0, &tg, &g, &FpeOptions::default()).unwrap();
        assert_eq!(c.final_density(), &u0[..]);
    }

    #[test]
    fn heat_matches_closed_form() {
        let g = Grid::absorbing_1d(8.0, 512).unwrap();
        let tg = TimeGrid::new(0.5, 256).unwrap();
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 0.25));
        for scheme in [Scheme::Explicit, Scheme::SemiImplicit] {
            let c = solve_fpe(&CoefficientField::heat(1, 2.0), &u0, &tg, &g, &FpeOptions::with_scheme(scheme)).unwrap();
            let err = c.l1_error(256, |x| gaussian_density(x, 0.0, 1.25));
            assert!(err < 5e-3, "{scheme:?}: {err}");
            assert!(c.min_value() >= -1e-12);
        }
    }

    #[test]
    fn ou_stationary() {
        let g = Grid::absorbing_1d(8.0, 512).unwrap();
        let tg = TimeGrid::new(1.0, 256).unwrap();
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 1.0));
        let c = solve_fpe(&CoefficientField::ou(1, 1.0, 2.0), &u0, &tg, &g, &FpeOptions::default()).unwrap();
        let drift = g.norm(&c.final_density().iter().zip(&u0).map(|(a, b)| a - b).collect::<Vec<_>>(), 1.0);
        assert!(drift < 5e-3, "{drift}");
    }

    #[test]
    fn periodic_mass_is_conserved() {
        let g = Grid::periodic_1d(3.0, 128).unwrap();
        let tg = TimeGrid::new(1.0, 50).unwrap();
        let u0 = g.sample(|x| 1.0 + 0.5 * (x[0] * std::f64::consts::PI / 3.0).sin());
        let f = CoefficientField::from_fns("p", 1, |_, x, a| a[0] = 1.0 + 0.5 * x[0].cos().powi(2), |_, x, b| b[0] = (x[0]).sin());
        let c = solve_fpe(&f, &u0, &tg, &g, &FpeOptions::default()).unwrap();
        assert!(c.mass_drift() < 1e-12);
    }

    #[test]
    fn narrow_box_is_rejected() {
        let g = Grid::absorbing_1d(2.0, 64).unwrap();
        let tg = TimeGrid::new(2.0, 20).unwrap();
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 0.05));
        let r = solve_fpe(&CoefficientField::heat(1, 2.0), &u0, &tg, &g, &FpeOptions::default());
        assert!(matches!(r, Err(Error::DomainTooSmall(_))));
    }

    #[test]
    fn substep_cap() {
        let g = Grid::absorbing_1d(8.0, 512).unwrap();
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 1.0));
        let opts = FpeOptions { max_substeps: 10, ..FpeOptions::default() };
        let r = solve_fpe(&CoefficientField::heat(1, 2.0), &u0, &tg, &g, &opts);
        assert!(matches!(r, Err(Error::SubstepCap { .. })));
    }
}

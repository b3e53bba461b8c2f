//! Coefficient approximation by mollification or push-forward, and the limit
//! metrics that the compactness argument drives to zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    generator_at, mollify_coefficients, pushforward_coefficients, pushforward_curve, CoefficientField, Convolver,
    GeneratorScratch, KernelFamily, MollifierKernel, SmoothMap,
};
use crate::fpe::{weak_form_residual, DensityCurve, Endpoints};

use super::dictionary::dictionary;

/// Dictionary entries used for the residual precondition.
const RESIDUAL_PROBES: usize = 8;

#[derive(Clone, Debug)]
pub enum ApproximationStage {
    Mollify { kernel: MollifierKernel },
    Pushforward { map: SmoothMap },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitMetrics {
    /// `int_0^T (int |L^n f - L f| dnu^n + int |L^n f - L f| dnu) dt` per dictionary entry.
    pub per_function: Vec<f64>,
    pub max: f64,
    /// Largest weak-form residual of the input curve over the probes.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ApproximationOutcome {
    pub field: CoefficientField,
    pub curve: DensityCurve,
    pub metrics: LimitMetrics,
}

/// Approximate `(field, nu)` by the chosen stage and measure the limit metrics on
/// the dictionary. Refused when `nu` does not solve the equation for `field` to
/// within `residual_tol`.
pub fn approximation_pipeline(
    field: &CoefficientField,
    nu: &DensityCurve,
    stage: &ApproximationStage,
    residual_tol: f64,
) -> Result<ApproximationOutcome> {
    let grid = &nu.grid;
    let entries = dictionary(grid.dim, grid.half_width);
    let tests: Vec<_> = entries.iter().map(|e| e.test_function()).collect();
    let residual = tests[..RESIDUAL_PROBES]
        .iter()
        .map(|f| weak_form_residual(nu, field, f, Endpoints::Include).map(f64::abs))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if !(residual <= residual_tol) {
        return Err(Error::Precondition(format!(
            "the curve does not solve the equation for '{}' (weak residual {residual:e} > {residual_tol:e})",
            field.name
        )));
    }
    let (approx_field, curve) = match stage {
        ApproximationStage::Mollify { kernel } => {
            let conv = Convolver::new(grid, kernel)?;
            let values: Vec<f64> = (0..=nu.timegrid.steps).flat_map(|k| conv.apply(nu.at(k))).collect();
            (mollify_coefficients(field, nu, kernel)?, DensityCurve::from_values(grid.clone(), nu.timegrid, values))
        }
        ApproximationStage::Pushforward { map } => (pushforward_coefficients(field, nu, map)?, pushforward_curve(nu, map)?),
    };
    let d = grid.dim;
    let times = nu.timegrid.nodes();
    let dt = nu.timegrid.dt();
    let per_function: Vec<f64> = tests
        .par_iter()
        .map(|f| {
            let mut s = GeneratorScratch::new(d);
            let mut x = vec![0.0; d];
            let per_time: Vec<f64> = times
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let (u, un) = (nu.at(k), curve.at(k));
                    let mut acc = 0.0;
                    for p in 0..grid.len() {
                        if u[p] == 0.0 && un[p] == 0.0 {
                            continue;
                        }
                        grid.node(p, &mut x);
                        let gap = (generator_at(&approx_field, f, t, &x, &mut s) - generator_at(field, f, t, &x, &mut s)).abs();
                        acc += gap * (u[p] + un[p]);
                    }
                    acc * grid.cell_volume()
                })
                .collect();
            if per_time.len() == 1 {
                per_time[0]
            } else {
                per_time.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
            }
        })
        .collect();
    let max = per_function.iter().copied().fold(0.0, f64::max);
    Ok(ApproximationOutcome { field: approx_field, curve, metrics: LimitMetrics { per_function, max, residual } })
}

/// Limit metric for each kernel scale, `(scale, max metric)`.
pub fn mollification_ladder(
    field: &CoefficientField,
    nu: &DensityCurve,
    family: KernelFamily,
    scales: &[f64],
    residual_tol: f64,
) -> Result<Vec<(f64, f64)>> {
    scales
        .iter()
        .map(|&eps| {
            let kernel = MollifierKernel::new(family, eps, nu.grid.dim)?;
            let out = approximation_pipeline(field, nu, &ApproximationStage::Mollify { kernel }, residual_tol)?;
            Ok((eps, out.metrics.max))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpe::{gaussian_density, solve_fpe, FpeOptions};
    use crate::grid::{Grid, TimeGrid};

    fn ou_curve() -> (CoefficientField, DensityCurve) {
        let g = Grid::absorbing_1d(8.0, 256).unwrap();
        let field = CoefficientField::ou(1, 1.0, 1.0);
        let u0 = g.sample(|x| gaussian_density(x, 1.0, 0.3));
        let nu = solve_fpe(&field, &u0, &TimeGrid::new(0.5, 16).unwrap(), &g, &FpeOptions::default()).unwrap();
        (field, nu)
    }

    #[test]
    fn constant_coefficients_are_exact() {
        let g = Grid::absorbing_1d(8.0, 256).unwrap();
        let field = CoefficientField::heat(1, 1.0);
        let u0 = g.sample(|x| gaussian_density(x, 0.0, 0.5));
        let nu = solve_fpe(&field, &u0, &TimeGrid::new(0.5, 16).unwrap(), &g, &FpeOptions::default()).unwrap();
        let kernel = MollifierKernel::gaussian(0.3, 1).unwrap();
        let out = approximation_pipeline(&field, &nu, &ApproximationStage::Mollify { kernel }, 1e-3).unwrap();
        assert!(out.metrics.max < 1e-12, "{}", out.metrics.max);
        assert!((out.curve.mass[0] - nu.mass[0]).abs() < 1e-12);
    }

    #[test]
    fn identity_pushforward() {
        let (field, nu) = ou_curve();
        let out = approximation_pipeline(&field, &nu, &ApproximationStage::Pushforward { map: SmoothMap::identity(1) }, 1e-3).unwrap();
        assert!(out.metrics.max < 1e-10, "{}", out.metrics.max);
    }

    #[test]
    fn ladder_decreases() {
        let (field, nu) = ou_curve();
        let ladder = mollification_ladder(&field, &nu, KernelFamily::Gaussian, &[0.4, 0.2, 0.1], 1e-3).unwrap();
        for w in ladder.windows(2) {
            assert!(w[1].1 <= 0.5 * w[0].1, "{ladder:?}");
        }
    }

    #[test]
    fn refuses_non_solutions() {
        let (_, nu) = ou_curve();
        let kernel = MollifierKernel::gaussian(0.3, 1).unwrap();
        let wrong = CoefficientField::linear_drift(vec![3.0], 1.0);
        assert!(matches!(
            approximation_pipeline(&wrong, &nu, &ApproximationStage::Mollify { kernel }, 1e-3),
            Err(Error::Precondition(_))
        ));
    }
}

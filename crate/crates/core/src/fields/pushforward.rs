//! Push-forward of a diffusion by a smooth map, by histogram binning.

use crate::error::{Error, Result};
use crate::fpe::DensityCurve;
use crate::grid::Grid;

use super::generator::GeneratorScratch;
use super::sampled::SampledCoefficients;
use super::{CoefficientField, SmoothMap};

struct Binned {
    mass: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn bin_one(field: &CoefficientField, grid: &Grid, u: &[f64], t: f64, pi: &SmoothMap) -> Result<Binned> {
    let d = grid.dim;
    let len = grid.len();
    let vol = grid.cell_volume();
    let mut out = Binned { mass: vec![0.0; len], a: vec![0.0; len * d * d], b: vec![0.0; len * d] };
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut hs = vec![0.0; d * d * d];
    let mut s = GeneratorScratch::new(d);
    for p in 0..len {
        if u[p] <= 0.0 {
            continue;
        }
        grid.node(p, &mut x);
        pi.apply(&x, &mut y);
        let bin = grid.cell_of(&y).ok_or_else(|| {
            Error::Resolution(format!("push-forward sends {x:?} to {y:?}, outside the target box"))
        })?;
        let w = u[p] * vol;
        field.diffusion(t, &x, &mut s.a);
        field.drift(t, &x, &mut s.b);
        pi.jacobian(&x, &mut jac);
        pi.hessians(&x, &mut hs);
        out.mass[bin] += w;
        for i in 0..d {
            let gi = &jac[i * d..(i + 1) * d];
            let hi = &hs[i * d * d..(i + 1) * d * d];
            let lpi: f64 = 0.5 * s.a.iter().zip(hi).map(|(a, h)| a * h).sum::<f64>()
                + s.b.iter().zip(gi).map(|(b, g)| b * g).sum::<f64>();
            out.b[bin * d + i] += w * lpi;
            for j in 0..d {
                let gj = &jac[j * d..(j + 1) * d];
                let mut q = 0.0;
                for k in 0..d {
                    for l in 0..d {
                        q += s.a[k * d + l] * gi[k] * gj[l];
                    }
                }
                out.a[(bin * d + i) * d + j] += w * q;
            }
        }
    }
    // an empty bin flanked by mass on both sides along some axis is a hole that
    // only a finer source grid (or coarser bins) can fill
    let reach = 2isize;
    for p in 0..len {
        if out.mass[p] > 0.0 {
            continue;
        }
        for axis in 0..d {
            let side = |dir: isize| {
                (1..=reach).any(|s| grid.neighbor(p, axis, dir * s).is_some_and(|q| out.mass[q] > 0.0))
            };
            if side(-1) && side(1) {
                return Err(Error::Resolution(format!(
                    "empty bin at {:?} inside the push-forward support; refine the source grid",
                    grid.node_vec(p)
                )));
            }
        }
    }
    Ok(out)
}

/// `pi(a)^ij = E[a(grad pi^i, grad pi^j) | pi]` and `pi(b)^i = E[L pi^i | pi]`,
/// computed per time node as ratios of binned push-forward measures. Bins where
/// the push-forward has no mass get the value 0.
pub fn pushforward_coefficients(field: &CoefficientField, nu: &DensityCurve, pi: &SmoothMap) -> Result<CoefficientField> {
    let grid = &nu.grid;
    let d = grid.dim;
    let len = grid.len();
    let times = nu.timegrid.nodes();
    let mut a_out = vec![0.0; times.len() * len * d * d];
    let mut b_out = vec![0.0; times.len() * len * d];
    for (k, &t) in times.iter().enumerate() {
        let binned = bin_one(field, grid, nu.at(k), t, pi)?;
        for p in 0..len {
            let m = binned.mass[p];
            if m <= 0.0 {
                continue;
            }
            for c in 0..d * d {
                a_out[(k * len + p) * d * d + c] = binned.a[p * d * d + c] / m;
            }
            for c in 0..d {
                b_out[(k * len + p) * d + c] = binned.b[p * d + c] / m;
            }
        }
    }
    let data = SampledCoefficients::new(grid.clone(), times, a_out, b_out)?;
    Ok(CoefficientField::sampled(format!("{}-pushed", field.name), data, 0.0))
}

/// Histogram densities of `pi_# nu_t` on the same grid.
pub fn pushforward_curve(nu: &DensityCurve, pi: &SmoothMap) -> Result<DensityCurve> {
    let grid = &nu.grid;
    let d = grid.dim;
    let vol = grid.cell_volume();
    let mut values = vec![0.0; nu.values.len()];
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let len = grid.len();
    for k in 0..=nu.timegrid.steps {
        let u = nu.at(k);
        for p in 0..len {
            if u[p] <= 0.0 {
                continue;
            }
            grid.node(p, &mut x);
            pi.apply(&x, &mut y);
            let bin = grid
                .cell_of(&y)
                .ok_or_else(|| Error::Resolution(format!("push-forward sends {x:?} outside the box")))?;
            values[k * len + bin] += u[p] * vol;
        }
        for v in &mut values[k * len..(k + 1) * len] {
            *v /= vol;
        }
    }
    Ok(DensityCurve::from_values(grid.clone(), nu.timegrid, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    fn gaussian_curve(grid: &Grid, tg: TimeGrid, support: f64) -> DensityCurve {
        let one = grid.sample(|x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if r2.sqrt() < support { (-r2).exp() } else { 0.0 }
        });
        let mut values = Vec::new();
        for _ in 0..=tg.steps {
            values.extend_from_slice(&one);
        }
        DensityCurve::from_values(grid.clone(), tg, values)
    }

    #[test]
    fn identity_and_constant_maps() {
        let g = Grid::absorbing_1d(4.0, 40).unwrap();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let nu = gaussian_curve(&g, tg, 10.0);
        let field = CoefficientField::from_fns("f", 1, |_, x, a| a[0] = 1.0 + x[0] * x[0], |t, x, b| b[0] = x[0].sin() + t);
        let pushed = pushforward_coefficients(&field, &nu, &SmoothMap::identity(1)).unwrap();
        let (mut a1, mut a2, mut b1, mut b2) = ([0.0], [0.0], [0.0], [0.0]);
        for k in 0..g.len() {
            let x = [g.coord(k)];
            field.diffusion(0.5, &x, &mut a1);
            pushed.diffusion(0.5, &x, &mut a2);
            field.drift(0.5, &x, &mut b1);
            pushed.drift(0.5, &x, &mut b2);
            assert!((a1[0] - a2[0]).abs() < 1e-12 && (b1[0] - b2[0]).abs() < 1e-12);
        }
        let c = pushforward_coefficients(&field, &nu, &SmoothMap::constant(vec![0.3])).unwrap();
        for k in 0..g.len() {
            let x = [g.coord(k)];
            c.diffusion(0.0, &x, &mut a2);
            c.drift(0.0, &x, &mut b2);
            assert_eq!((a2[0], b2[0]), (0.0, 0.0));
        }
        let curve = pushforward_curve(&nu, &SmoothMap::constant(vec![0.3])).unwrap();
        assert!((g.integrate(curve.at(1)) - g.integrate(nu.at(1))).abs() < 1e-12);
    }

    #[test]
    fn truncated_identity_on_support() {
        let g = Grid::absorbing_1d(6.0, 60).unwrap();
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let nu = gaussian_curve(&g, tg, 2.0);
        let field = CoefficientField::ou(1, 1.0, 2.0);
        let pi = SmoothMap::truncated_identity(1, 2.0).unwrap();
        let pushed = pushforward_coefficients(&field, &nu, &pi).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        for k in 0..g.len() {
            let x = g.coord(k);
            if x.abs() < 2.0 {
                pushed.diffusion(0.0, &[x], &mut a);
                pushed.drift(0.0, &[x], &mut b);
                assert!((a[0] - 2.0).abs() < 1e-12 && (b[0] + x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expanding_map_reports_resolution() {
        let g = Grid::absorbing_1d(4.0, 40).unwrap();
        let tg = TimeGrid::new(1.0, 1).unwrap();
        let nu = gaussian_curve(&g, tg, 1.0);
        let stretch = SmoothMap::new(
            1,
            std::sync::Arc::new(|x, y| y[0] = 3.0 * x[0]),
            std::sync::Arc::new(|_, j| j[0] = 3.0),
            std::sync::Arc::new(|_, h| h[0] = 0.0),
            3.0,
        );
        let field = CoefficientField::heat(1, 1.0);
        assert!(matches!(pushforward_coefficients(&field, &nu, &stretch), Err(Error::Resolution(_))));
    }
}

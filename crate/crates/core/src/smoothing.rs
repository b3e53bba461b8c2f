//! Smoothing semigroups: the heat semigroup `P^alpha = exp(alpha Laplacian)`
//! (Gaussian convolution with variance `2 alpha`) and the weighted semigroup
//! `P_a^alpha` generated by `div(a grad)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grid::Grid;
use crate::linalg::{self, CsrMatrix};
use crate::spectral::Spectral;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothed {
    pub values: Vec<f64>,
    /// Largest deviation from 1 of the truncated kernel mass before renormalization
    /// (always 0 on periodic grids).
    pub kernel_mass_defect: f64,
    /// The kernel is wider than the box, so truncation dominates the result.
    pub unreliable: bool,
}

/// `P^alpha f`: spectral on periodic grids, truncated renormalized Gaussian
/// convolution (applied axis by axis) on absorbing grids.
pub fn heat_apply(grid: &Grid, f: &[f64], alpha: f64) -> Result<Smoothed> {
    if !(alpha >= 0.0) {
        return Err(Error::Precondition(format!("smoothing time must be nonnegative, got {alpha}")));
    }
    let unreliable = 3.0 * (2.0 * alpha).sqrt() > 2.0 * grid.half_width;
    if alpha == 0.0 {
        return Ok(Smoothed { values: f.to_vec(), kernel_mass_defect: 0.0, unreliable: false });
    }
    if grid.is_periodic() {
        let s = Spectral::new(grid)?;
        return Ok(Smoothed { values: s.heat(f, alpha), kernel_mass_defect: 0.0, unreliable });
    }
    let n = grid.points_per_axis;
    let h = grid.spacing();
    let norm = h / (4.0 * std::f64::consts::PI * alpha).sqrt();
    let weights: Vec<f64> = (0..n).map(|o| norm * (-(o as f64 * h).powi(2) / (4.0 * alpha)).exp()).collect();
    let kernel = |i: usize, v: &[f64]| -> f64 { (0..n).map(|j| weights[i.abs_diff(j)] * v[j]).sum() };
    let ones = vec![1.0; n];
    let defect = (0..n).map(|i| (kernel(i, &ones) - 1.0).abs()).fold(0.0, f64::max);
    // Symmetric Sinkhorn scaling d_i K_ij d_j: doubly stochastic, so constants are
    // kept and every L^p norm contracts.
    let mut scale = vec![1.0; n];
    for _ in 0..10_000 {
        let ks: Vec<f64> = (0..n).map(|i| kernel(i, &scale)).collect();
        let worst = (0..n).map(|i| (scale[i] * ks[i] - 1.0).abs()).fold(0.0, f64::max);
        if worst <= 1e-14 {
            break;
        }
        for (d, k) in scale.iter_mut().zip(&ks) {
            *d = (*d / k).sqrt();
        }
    }
    let mut out = f.to_vec();
    let mut line = vec![0.0; n];
    for axis in 0..grid.dim {
        let stride = grid.stride(axis);
        let outer = grid.len() / (n * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = out[base + i * stride] * scale[i];
                }
                for i in 0..n {
                    out[base + i * stride] = scale[i] * kernel(i, &line);
                }
            }
        }
    }
    Ok(Smoothed { values: out, kernel_mass_defect: defect, unreliable })
}

/// Backward-Euler propagator for `d_s g = div(a(t, .) grad g)`, in conservative
/// flux form with zero-flux walls on absorbing grids.
#[derive(Clone, Debug)]
pub struct WeightedSemigroup {
    grid: Grid,
    alpha: f64,
    steps: usize,
    /// `I - (alpha / steps) W`.
    system: CsrMatrix,
}

pub const DEFAULT_WEIGHTED_STEPS: usize = 64;

impl WeightedSemigroup {
    pub fn new(field: &CoefficientField, t: f64, grid: &Grid, alpha: f64, steps: usize) -> Result<Self> {
        if field.ellipticity_lambda <= 0.0 {
            return Err(Error::Precondition(format!(
                "the weighted semigroup needs an elliptic field; '{}' declares lambda = {}",
                field.name, field.ellipticity_lambda
            )));
        }
        if !(alpha >= 0.0) || steps == 0 {
            return Err(Error::Precondition("need alpha >= 0 and at least one step".into()));
        }
        let w = dirichlet_operator(field, t, grid);
        let system = w.identity_plus(-alpha / steps as f64);
        Ok(Self { grid: grid.clone(), alpha, steps, system })
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if self.alpha == 0.0 {
            return Ok(f.to_vec());
        }
        let mut g = f.to_vec();
        for _ in 0..self.steps {
            g = if self.grid.dim == 1 {
                tridiagonal_solve(&self.system, self.grid.is_periodic(), &g)
            } else {
                let mut x = g.clone();
                linalg::conjugate_gradient(&self.system, &g, &mut x, 1e-14, 20_000)?;
                x
            };
        }
        Ok(g)
    }
}

fn tridiagonal_solve(m: &CsrMatrix, periodic: bool, rhs: &[f64]) -> Vec<f64> {
    let n = m.n;
    let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        for p in m.row_ptr[i]..m.row_ptr[i + 1] {
            let c = m.col[p];
            if c == i {
                diag[i] += m.val[p];
            } else if c == (i + n - 1) % n {
                lower[i] += m.val[p];
            } else {
                upper[i] += m.val[p];
            }
        }
    }
    if periodic && n > 2 {
        linalg::solve_cyclic_tridiagonal(&lower, &diag, &upper, rhs)
    } else {
        linalg::solve_tridiagonal(&lower, &diag, &upper, rhs)
    }
}

/// Symmetric matrix of `div(a grad)`: axis faces carry `a^ii` at the face
/// midpoint, off-diagonal entries enter through the corners of each
/// `2^d`-block of nodes.
fn dirichlet_operator(field: &CoefficientField, t: f64, grid: &Grid) -> CsrMatrix {
    let d = grid.dim;
    let h = grid.spacing();
    let mut trip = Vec::new();
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    for p in 0..grid.len() {
        grid.node(p, &mut x);
        for i in 0..d {
            let Some(q) = grid.neighbor(p, i, 1) else { continue };
            let mut y = x.clone();
            y[i] += 0.5 * h;
            field.diffusion(t, &y, &mut a);
            let c = a[i * d + i] / (h * h);
            trip.extend([(p, p, -c), (p, q, c), (q, p, c), (q, q, -c)]);
        }
    }
    if d > 1 {
        // corner c is the upper vertex of the block whose lowest node is p
        let mut idx = vec![0usize; d];
        for p in 0..grid.len() {
            grid.multi_index(p, &mut idx);
            let mut block = Vec::with_capacity(1 << d);
            let mut ok = true;
            for corner in 0..(1usize << d) {
                let mut node = p;
                for axis in 0..d {
                    if corner >> axis & 1 == 1 {
                        match grid.neighbor(node, axis, 1) {
                            Some(q) => node = q,
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                }
                if !ok {
                    break;
                }
                block.push(node);
            }
            if !ok {
                continue;
            }
            grid.node(p, &mut x);
            for v in x.iter_mut() {
                *v += 0.5 * h;
            }
            field.diffusion(t, &x, &mut a);
            let scale = 1.0 / (1usize << (d - 1)) as f64 / h;
            // D_i g = scale * sum over the block of sign_i(corner) g(corner)
            let sign = |corner: usize, axis: usize| if corner >> axis & 1 == 1 { 1.0 } else { -1.0 };
            for i in 0..d {
                for j in 0..d {
                    if i == j {
                        continue;
                    }
                    let coef = a[i * d + j] * scale * scale;
                    for (ca, &na) in block.iter().enumerate() {
                        for (cb, &nb) in block.iter().enumerate() {
                            // energy term a_ij D_i g D_j g; its gradient gives -W
                            let v = coef * sign(ca, i) * sign(cb, j);
                            trip.push((na, nb, -0.5 * v));
                            trip.push((nb, na, -0.5 * v));
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(grid.len(), trip)
}

/// `P_a^alpha f` with `a` frozen at time `t`.
pub fn weighted_semigroup_apply(
    field: &CoefficientField,
    t: f64,
    grid: &Grid,
    f: &[f64],
    alpha: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    WeightedSemigroup::new(field, t, grid, alpha, steps)?.apply(f)
}

/// `sqrt(alpha) ||grad P^alpha f||_p / ||f||_p` on a periodic grid.
pub fn gradient_ratio(grid: &Grid, f: &[f64], alpha: f64, p: f64) -> Result<f64> {
    let s = Spectral::new(grid)?;
    let pf = s.heat(f, alpha);
    let mut mag = vec![0.0; grid.len()];
    for axis in 0..grid.dim {
        for (m, v) in mag.iter_mut().zip(s.derivative(&pf, axis)) {
            *m += v * v;
        }
    }
    mag.iter_mut().for_each(|m| *m = m.sqrt());
    Ok(alpha.sqrt() * grid.norm(&mag, p) / grid.norm(f, p))
}

/// `alpha ||d_i d_j P^alpha f||_p / ||f||_p` on a periodic grid.
pub fn second_order_ratio(grid: &Grid, f: &[f64], alpha: f64, i: usize, j: usize, p: f64) -> Result<f64> {
    let s = Spectral::new(grid)?;
    let pf = s.heat(f, alpha);
    let dd = s.second_derivative(&pf, i, j);
    Ok(alpha * grid.norm(&dd, p) / grid.norm(f, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpe::gaussian_density;
    use crate::grid::Boundary;

    #[test]
    fn heat_of_gaussian() {
        for boundary in [Boundary::Periodic, Boundary::Absorbing] {
            let g = Grid::new(1, 10.0, 1024, boundary).unwrap();
            let f = g.sample(|x| gaussian_density(x, 0.0, 0.3));
            let out = heat_apply(&g, &f, 0.4).unwrap();
            let exact = g.sample(|x| gaussian_density(x, 0.0, 1.1));
            let err = out.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{boundary:?}: {err}");
        }
    }

    #[test]
    fn identity_and_constants() {
        let g = Grid::absorbing_1d(3.0, 50).unwrap();
        let f = g.sample(|x| x[0].sin());
        assert_eq!(heat_apply(&g, &f, 0.0).unwrap().values, f);
        let c = heat_apply(&g, &vec![2.5; 50], 0.7).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-13));
        assert!(c.kernel_mass_defect > 0.0);
        assert!(heat_apply(&g, &f, 100.0).unwrap().unreliable);
        assert!(heat_apply(&g, &f, -1.0).is_err());
    }

    #[test]
    fn weighted_matches_heat_for_identity() {
        let g = Grid::periodic_1d(10.0, 512).unwrap();
        let f = g.sample(|x| gaussian_density(x, 0.0, 1.0));
        let heat = heat_apply(&g, &f, 0.05).unwrap().values;
        let w = weighted_semigroup_apply(&CoefficientField::heat(1, 1.0), 0.0, &g, &f, 0.05, 64).unwrap();
        let err = heat.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn weighted_conserves_and_obeys_maximum_principle() {
        let g = Grid::absorbing_1d(4.0, 128).unwrap();
        let field = CoefficientField::from_fns("w", 1, |_, x, a| a[0] = 1.0 + 0.5 * x[0].sin(), |_, _, b| b[0] = 0.0)
            .with_lambda(0.5);
        let f = g.sample(|x| (3.0 * x[0]).cos() + 0.2 * x[0]);
        let out = weighted_semigroup_apply(&field, 0.0, &g, &f, 0.3, 64).unwrap();
        assert!((g.integrate(&out) - g.integrate(&f)).abs() < 1e-10);
        let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!(out.iter().all(|v| *v >= lo - 1e-10 && *v <= hi + 1e-10));
        let c = weighted_semigroup_apply(&field, 0.0, &g, &vec![1.5; 128], 0.3, 64).unwrap();
        assert!(c.iter().all(|v| (v - 1.5).abs() < 1e-12));
        assert!(weighted_semigroup_apply(&CoefficientField::zero(1), 0.0, &g, &f, 0.3, 64).is_err());
    }

    #[test]
    fn weighted_two_dimensional() {
        let g = Grid::new(2, 3.0, 24, Boundary::Periodic).unwrap();
        let field = CoefficientField::constant(vec![1.0, 0.3, 0.3, 0.8], vec![0.0, 0.0]).unwrap();
        let f = g.sample(|x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let out = weighted_semigroup_apply(&field, 0.0, &g, &f, 0.2, 16).unwrap();
        assert!((g.integrate(&out) - g.integrate(&f)).abs() < 1e-10);
        assert!(g.norm(&out, 2.0) <= g.norm(&f, 2.0) + 1e-10);
    }

    #[test]
    fn smoothing_constants() {
        let g = Grid::periodic_1d(std::f64::consts::PI, 256).unwrap();
        let f = g.sample(|x| (-4.0 * x[0] * x[0]).exp());
        for alpha in [1e-3, 1e-2, 0.1, 1.0] {
            let r = gradient_ratio(&g, &f, alpha, 2.0).unwrap();
            assert!(r <= (2.0 * std::f64::consts::E).powf(-0.5) + 1e-3);
            assert!(second_order_ratio(&g, &f, alpha, 0, 0, f64::INFINITY).unwrap() <= 2.0);
        }
    }
}

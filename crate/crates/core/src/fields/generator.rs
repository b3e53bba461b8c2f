//! The generator `L`, the carre du champ and the divergence `div L`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::grid::{Grid, TimeGrid};
use crate::testfn::TestFunction;

use super::{CoefficientField, NORM_B, NORM_D2A_POS, NORM_DIV_NEG, NORM_DT_A};

/// Per-call buffers for pointwise generator evaluation.
#[derive(Clone, Debug)]
pub struct GeneratorScratch {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl GeneratorScratch {
    pub fn new(d: usize) -> Self {
        Self { a: vec![0.0; d * d], b: vec![0.0; d], grad: vec![0.0; d], hess: vec![0.0; d * d] }
    }
}

/// `(L_t f)(x) = 1/2 a:D^2 f + b.grad f`.
pub fn generator_at(field: &CoefficientField, f: &TestFunction, t: f64, x: &[f64], s: &mut GeneratorScratch) -> f64 {
    let d = field.dim();
    field.diffusion(t, x, &mut s.a);
    field.drift(t, x, &mut s.b);
    f.gradient(t, x, &mut s.grad);
    f.hessian(t, x, &mut s.hess);
    let second: f64 = s.a.iter().zip(&s.hess).map(|(a, h)| a * h).sum();
    let first: f64 = (0..d).map(|i| s.b[i] * s.grad[i]).sum();
    0.5 * second + first
}

/// `a(grad f, grad f)` at `(t, x)`.
pub fn carre_du_champ_at(field: &CoefficientField, f: &TestFunction, t: f64, x: &[f64], s: &mut GeneratorScratch) -> f64 {
    let d = field.dim();
    field.diffusion(t, x, &mut s.a);
    f.gradient(t, x, &mut s.grad);
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += s.a[i * d + j] * s.grad[i] * s.grad[j];
        }
    }
    q
}

/// `L_t f` on every grid node.
pub fn apply_generator(field: &CoefficientField, f: &TestFunction, t: f64, grid: &Grid) -> Vec<f64> {
    let d = grid.dim;
    (0..grid.len())
        .into_par_iter()
        .map_init(
            || (GeneratorScratch::new(d), vec![0.0; d]),
            |(s, x), k| {
                grid.node(k, x);
                generator_at(field, f, t, x, s)
            },
        )
        .collect()
}

/// Node values of `div L` together with its two ingredients.
#[derive(Clone, Debug)]
pub struct DivergenceField {
    /// `div L = div b - 1/2 sum_ij d_i d_j a^ij`.
    pub values: Vec<f64>,
    pub div_b: Vec<f64>,
    /// `sum_ij d_i d_j a^ij`.
    pub second_div_a: Vec<f64>,
    /// Nodes whose stencil was made one-sided because it touched an absorbing edge.
    pub skirt: Vec<bool>,
}

/// Derivative stencils along one axis: offsets and weights (in units of `h`).
fn first_stencil(i: usize, n: usize, one_sided: bool) -> &'static [(isize, f64)] {
    if !one_sided || (i > 0 && i + 1 < n) {
        &[(-1, -0.5), (1, 0.5)]
    } else if i == 0 {
        &[(0, -1.5), (1, 2.0), (2, -0.5)]
    } else {
        &[(0, 1.5), (-1, -2.0), (-2, 0.5)]
    }
}

fn second_stencil(i: usize, n: usize, one_sided: bool) -> &'static [(isize, f64)] {
    if !one_sided || (i > 0 && i + 1 < n) {
        &[(-1, 1.0), (0, -2.0), (1, 1.0)]
    } else if i == 0 {
        &[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)]
    } else {
        &[(0, 2.0), (-1, -5.0), (-2, 4.0), (-3, -1.0)]
    }
}

/// Central second-order differences of `div b` and `sum d_i d_j a^ij` at each node.
/// Stencil points are evaluated through the field's evaluator; on absorbing grids
/// nodes on the outermost cell use one-sided stencils that stay inside the box
/// and are flagged in `skirt`.
pub fn divergence_parts(field: &CoefficientField, t: f64, grid: &Grid) -> DivergenceField {
    let d = grid.dim;
    let h = grid.spacing();
    let n = grid.points_per_axis;
    let one_sided = !grid.is_periodic();
    let rows: Vec<(f64, f64, bool)> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; d], vec![0.0; d], vec![0.0; d * d], vec![0.0; d], vec![0usize; d]),
            |(x0, y, a, b, idx), k| {
                grid.node(k, x0);
                grid.multi_index(k, idx);
                let skirt = one_sided && idx.iter().any(|&i| i == 0 || i + 1 == n);
                let mut div_b = 0.0;
                let mut d2a = 0.0;
                for i in 0..d {
                    for &(o, w) in first_stencil(idx[i], n, one_sided) {
                        y.copy_from_slice(x0);
                        y[i] += o as f64 * h;
                        field.drift(t, y, b);
                        div_b += w * b[i] / h;
                    }
                    for &(o, w) in second_stencil(idx[i], n, one_sided) {
                        y.copy_from_slice(x0);
                        y[i] += o as f64 * h;
                        field.diffusion(t, y, a);
                        d2a += w * a[i * d + i] / (h * h);
                    }
                    for j in 0..d {
                        if j == i {
                            continue;
                        }
                        for &(oi, wi) in first_stencil(idx[i], n, one_sided) {
                            for &(oj, wj) in first_stencil(idx[j], n, one_sided) {
                                y.copy_from_slice(x0);
                                y[i] += oi as f64 * h;
                                y[j] += oj as f64 * h;
                                field.diffusion(t, y, a);
                                d2a += wi * wj * a[i * d + j] / (h * h);
                            }
                        }
                    }
                }
                (div_b, d2a, skirt)
            },
        )
        .collect();
    let div_b: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let second_div_a: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let values = div_b.iter().zip(&second_div_a).map(|(b, a)| b - 0.5 * a).collect();
    DivergenceField { values, div_b, second_div_a, skirt: rows.iter().map(|r| r.2).collect() }
}

/// `div L` on the grid.
pub fn divergence_generator(field: &CoefficientField, t: f64, grid: &Grid) -> DivergenceField {
    divergence_parts(field, t, grid)
}

/// The norms used by the energy estimates, measured on the grid by finite
/// differences and trapezoidal quadrature in time.
pub fn measured_norms(field: &CoefficientField, grid: &Grid, timegrid: &TimeGrid) -> BTreeMap<String, f64> {
    let d = grid.dim;
    let times = timegrid.nodes();
    let mut div_neg = Vec::with_capacity(times.len());
    let mut d2a_pos = Vec::with_capacity(times.len());
    let mut bsup = Vec::with_capacity(times.len());
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut a0 = vec![0.0; d * d];
    let mut a1 = vec![0.0; d * d];
    let mut dt_a = 0.0f64;
    let eps = 1e-5;
    for &t in &times {
        let div = divergence_parts(field, t, grid);
        div_neg.push(div.values.iter().fold(0.0f64, |m, v| m.max(-v)));
        d2a_pos.push(div.second_div_a.iter().fold(0.0f64, |m, v| m.max(*v)));
        let mut bmax = 0.0f64;
        for k in 0..grid.len() {
            grid.node(k, &mut x);
            field.drift(t, &x, &mut b);
            bmax = bmax.max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
            if field.time_dependent {
                field.diffusion(t + eps, &x, &mut a1);
                field.diffusion(t - eps, &x, &mut a0);
                for (p, q) in a1.iter().zip(&a0) {
                    dt_a = dt_a.max(((p - q) / (2.0 * eps)).abs());
                }
            }
        }
        bsup.push(bmax);
    }
    let trap = |v: &[f64]| -> f64 {
        let dt = timegrid.dt();
        v.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum()
    };
    BTreeMap::from([
        (NORM_DIV_NEG.to_string(), trap(&div_neg)),
        (NORM_D2A_POS.to_string(), trap(&d2a_pos)),
        (NORM_B.to_string(), trap(&bsup)),
        (NORM_DT_A.to_string(), dt_a),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn generator_examples() {
        let g = Grid::absorbing_1d(3.0, 31).unwrap();
        let ou = CoefficientField::ou(1, 1.0, 2.0);
        let f = TestFunction::half_square(1);
        let lf = apply_generator(&ou, &f, 0.0, &g);
        for (k, v) in lf.iter().enumerate() {
            let x = g.coord(k);
            assert!((v - (1.0 - x * x)).abs() < 1e-12);
        }
        let heat = CoefficientField::heat(1, 2.0);
        let sq = TestFunction::stationary(1, |x| x[0] * x[0], |x, g| g[0] = 2.0 * x[0], |_, h| h[0] = 2.0);
        assert!(apply_generator(&heat, &sq, 0.0, &g).iter().all(|v| (v - 2.0).abs() < 1e-12));
        let xi = TestFunction::coordinate(1, 0);
        let lx = apply_generator(&ou, &xi, 0.0, &g);
        for (k, v) in lx.iter().enumerate() {
            assert!((v + g.coord(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_examples() {
        let g = Grid::new(2, 2.0, 16, Boundary::Periodic).unwrap();
        let c = CoefficientField::constant(vec![1.0, 0.2, 0.2, 1.0], vec![0.3, -0.1]).unwrap();
        assert!(divergence_generator(&c, 0.0, &g).values.iter().all(|v| v.abs() < 1e-12));

        let g3 = Grid::new(3, 2.0, 8, Boundary::Absorbing).unwrap();
        let ou = CoefficientField::ou(3, 1.0, 0.0);
        let div = divergence_generator(&ou, 0.0, &g3);
        assert!(div.values.iter().all(|v| (v + 3.0).abs() < 1e-10));
        assert!(div.skirt.iter().any(|s| *s));

        // a = x^2, b = 0: div L = -1/2 * 2 = -1
        let g1 = Grid::absorbing_1d(2.0, 40).unwrap();
        let quad = CoefficientField::from_fns("x2", 1, |_, x, a| a[0] = x[0] * x[0], |_, _, b| b[0] = 0.0);
        let div = divergence_generator(&quad, 0.0, &g1);
        assert!(div.values.iter().all(|v| (v + 1.0).abs() < 1e-9));
    }

    #[test]
    fn divergence_is_second_order() {
        let field = CoefficientField::from_fns(
            "smooth",
            1,
            |_, x, a| a[0] = 2.0 + x[0].sin(),
            |_, x, b| b[0] = (2.0 * x[0]).cos(),
        );
        let exact = |x: f64| -2.0 * (2.0 * x).sin() + 0.5 * x.sin();
        let err = |n: usize| {
            let g = Grid::periodic_1d(std::f64::consts::PI, n).unwrap();
            let div = divergence_generator(&field, 0.0, &g);
            (0..n).map(|k| (div.values[k] - exact(g.coord(k))).abs()).fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!(ratio > 3.8 && ratio < 4.2, "ratio {ratio}");
    }
}

//! Small dense helpers, the PSD square root, a CSR matrix and the iterative /
//! banded solvers used by the implicit schemes.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_HARD_TOL: f64 = 1e-6;

fn check_symmetric(a: &[f64], d: usize) -> Result<f64> {
    if a.len() != d * d {
        return Err(Error::InvalidCoefficient(format!("expected {} entries, got {}", d * d, a.len())));
    }
    let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            let gap = (a[i * d + j] - a[j * d + i]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(Error::InvalidCoefficient(format!(
                    "matrix not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(scale)
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = DMatrix::from_row_slice(d, d, a);
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest eigenvalue of a symmetric `d x d` matrix given row-major.
pub fn min_eigenvalue(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => {
            let m = 0.5 * (a[0] + a[3]);
            let off = 0.5 * (a[1] + a[2]);
            let r = (0.25 * (a[0] - a[3]).powi(2) + off * off).sqrt();
            m - r
        }
        _ => symmetric_eigen(a, d).0[0],
    }
}

/// Symmetric non-negative square root of a symmetric PSD matrix (row-major).
/// Eigenvalues slightly below zero are clamped; clearly negative ones are rejected.
pub fn sqrt_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    check_symmetric(a, d)?;
    let mut out = vec![0.0; d * d];
    sqrt_psd_into(a, d, &mut out)?;
    Ok(out)
}

/// Like [`sqrt_psd`] without the symmetry check and allocation; used on hot paths.
pub fn sqrt_psd_into(a: &[f64], d: usize, out: &mut [f64]) -> Result<()> {
    if d == 1 {
        if a[0] < -PSD_HARD_TOL {
            return Err(Error::NotPsd { min_eigenvalue: a[0] });
        }
        out[0] = a[0].max(0.0).sqrt();
        return Ok(());
    }
    let (values, vectors) = symmetric_eigen(a, d);
    if values[0] < -PSD_HARD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: values[0] });
    }
    let roots: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    for i in 0..d {
        for j in i..d {
            let s: f64 = (0..d).map(|k| vectors[(i, k)] * roots[k] * vectors[(j, k)]).sum();
            out[i * d + j] = s;
            out[j * d + i] = s;
        }
    }
    Ok(())
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                c[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    c
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, col, val }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[p] * x[self.col[p]];
            }
            *yi = s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.val.len());
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push((self.col[p], i, self.val[p]));
            }
        }
        Self::from_triplets(self.n, t)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&p| self.col[p] == i)
                    .map_or(0.0, |p| self.val[p])
            })
            .collect()
    }

    /// `I + s * self`.
    pub fn identity_plus(&self, s: f64) -> Self {
        let mut t = Vec::with_capacity(self.val.len() + self.n);
        for i in 0..self.n {
            t.push((i, i, 1.0));
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push((i, self.col[p], s * self.val[p]));
            }
        }
        Self::from_triplets(self.n, t)
    }

    /// Sum of the negative off-diagonal entries of row `i` (zero for an M-matrix pattern).
    pub fn negative_offdiag(&self, i: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .filter(|&p| self.col[p] != i && self.val[p] < 0.0)
            .map(|p| self.val[p])
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB for a general sparse system.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm2(&r) <= tol * bnorm {
        return Ok(0);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut resid = f64::INFINITY;
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_diag[i] * p[i];
        }
        a.mul_vec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(it);
        }
        for i in 0..n {
            z[i] = inv_diag[i] * s[i];
        }
        a.mul_vec(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        resid = norm2(&r) / bnorm;
        if resid <= tol {
            return Ok(it);
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::Numeric { what: "BiCGSTAB".into(), residual: resid })
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive definite system.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut resid = norm2(&r) / bnorm;
    if resid <= tol {
        return Ok(0);
    }
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        resid = norm2(&r) / bnorm;
        if resid <= tol {
            return Ok(it);
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numeric { what: "conjugate gradient".into(), residual: resid })
}

/// Thomas algorithm. `lower[i]` couples row `i` to `x[i-1]`, `upper[i]` to `x[i+1]`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve (Sherman-Morrison). `lower[0]` couples row 0 to
/// `x[n-1]` and `upper[n-1]` couples row `n-1` to `x[0]`.
pub fn solve_cyclic_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut dd = diag.to_vec();
    dd[0] -= gamma;
    dd[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(lower, &dd, upper, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(lower, &dd, upper, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

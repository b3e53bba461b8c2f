//! Empirical martingale-problem diagnostics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{carre_du_champ_at, generator_at, CoefficientField, GeneratorScratch};
use crate::testfn::TestFunction;

use super::PathEnsemble;

/// A bounded path functional that declares which nodes it reads. The closure
/// receives the states at the declared nodes, concatenated in declaration order,
/// and nothing else.
#[derive(Clone)]
pub struct Observable {
    pub reads: Vec<usize>,
    func: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("reads", &self.reads).finish()
    }
}

impl Observable {
    pub fn new(reads: Vec<usize>, func: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { reads, func: Arc::new(func) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(Vec::new(), move |_| c)
    }

    /// `sign(X_k^coord)` for a `dim`-dimensional ensemble.
    pub fn sign_at(node: usize, coord: usize) -> Self {
        Self::new(vec![node], move |x| x[coord].signum())
    }

    /// The value on path `p`.
    pub fn eval(&self, ens: &PathEnsemble, p: usize) -> f64 {
        self.evaluate(ens, p, &mut Vec::new())
    }

    fn evaluate(&self, ens: &PathEnsemble, p: usize, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        for &k in &self.reads {
            buf.extend_from_slice(ens.state(p, k));
        }
        (self.func)(buf)
    }

    fn check_measurable(&self, limit: usize) -> Result<()> {
        match self.reads.iter().find(|k| **k > limit) {
            Some(&node) => Err(Error::Measurability { node, limit }),
            None => Ok(()),
        }
    }
}

/// A weighted Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Statistic {
    pub fn from_samples(xs: &[f64], weights: &[f64]) -> Self {
        let value: f64 = xs.iter().zip(weights).map(|(x, w)| w * x).sum();
        let var: f64 = xs.iter().zip(weights).map(|(x, w)| w * w * (x - value).powi(2)).sum();
        Self { value, se: var.sqrt(), n: xs.len() }
    }

    /// `|value| / se`, with `0/0 = 0`.
    pub fn z_score(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.value.abs() / self.se
        }
    }
}

fn compensator(field: &CoefficientField, f: &TestFunction, ens: &PathEnsemble, p: usize, k0: usize, k1: usize, s: &mut GeneratorScratch) -> f64 {
    let h = |k: usize, s: &mut GeneratorScratch| {
        let t = ens.time(k);
        let x = ens.state(p, k);
        f.time_derivative(t, x) + generator_at(field, f, t, x, s)
    };
    let mut acc = 0.0;
    let mut prev = h(k0, s);
    for k in k0..k1 {
        let next = h(k + 1, s);
        acc += 0.5 * ens.dt * (prev + next);
        prev = next;
    }
    acc
}

/// Weighted mean of `g (M_t - M_s)` with `M_r = f(r, X_r) - int_0^r (d_t + L) f`
/// (trapezoid in time).
pub fn martingale_defect(
    ens: &PathEnsemble,
    field: &CoefficientField,
    f: &TestFunction,
    s: f64,
    t: f64,
    observable: &Observable,
) -> Result<Statistic> {
    let (ks, kt) = (ens.node_index(s)?, ens.node_index(t)?);
    if ks > kt {
        return Err(Error::Precondition("need s <= t".into()));
    }
    observable.check_measurable(ks)?;
    let d = ens.dim;
    let xs: Vec<f64> = (0..ens.n_paths)
        .into_par_iter()
        .map_init(
            || (GeneratorScratch::new(d), Vec::new()),
            |(scratch, buf), p| {
                let g = observable.evaluate(ens, p, buf);
                if g == 0.0 {
                    return 0.0;
                }
                let dm = f.value(ens.time(kt), ens.state(p, kt))
                    - f.value(ens.time(ks), ens.state(p, ks))
                    - compensator(field, f, ens, p, ks, kt, scratch);
                g * dm
            },
        )
        .collect();
    Ok(Statistic::from_samples(&xs, &ens.weights))
}

/// Weighted mean of `M_t^2 - int_0^t a(grad f, grad f)`, zero in expectation for a
/// martingale solution.
pub fn quadratic_variation_check(ens: &PathEnsemble, field: &CoefficientField, f: &TestFunction, t: f64) -> Result<Statistic> {
    let kt = ens.node_index(t)?;
    let d = ens.dim;
    let xs: Vec<f64> = (0..ens.n_paths)
        .into_par_iter()
        .map_init(
            || GeneratorScratch::new(d),
            |scratch, p| {
                let m = f.value(ens.time(kt), ens.state(p, kt))
                    - f.value(ens.time(0), ens.state(p, 0))
                    - compensator(field, f, ens, p, 0, kt, scratch);
                let mut qv = 0.0;
                let mut prev = carre_du_champ_at(field, f, ens.time(0), ens.state(p, 0), scratch);
                for k in 0..kt {
                    let next = carre_du_champ_at(field, f, ens.time(k + 1), ens.state(p, k + 1), scratch);
                    qv += 0.5 * ens.dt * (prev + next);
                    prev = next;
                }
                m * m - qv
            },
        )
        .collect();
    Ok(Statistic::from_samples(&xs, &ens.weights))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub exponent: f64,
    pub quantile: f64,
    /// Calibrated on the even-indexed paths.
    pub constant: f64,
    /// Fraction of odd-indexed paths exceeding the calibrated constant.
    pub violation_fraction: f64,
}

/// Dyadic Hölder calibration for coordinate `coord`: the constant `C` is the
/// `quantile` of the per-path sup of `|X_t - X_s| / |t - s|^r` over dyadic pairs on
/// one half of the ensemble, and the violation rate is measured on the other half.
pub fn holder_check(ens: &PathEnsemble, coord: usize, exponent: f64, quantile: f64) -> Result<HolderReport> {
    if ens.n_paths < 2 || ens.steps == 0 {
        return Err(Error::Precondition("need at least two paths and one step".into()));
    }
    let m = ens.steps;
    let sup_ratio = |p: usize| {
        let mut worst = 0.0f64;
        let mut len = m;
        while len >= 1 {
            let span = (len as f64 * ens.dt).powf(exponent);
            let mut k = 0;
            while k + len <= m {
                let inc = (ens.state(p, k + len)[coord] - ens.state(p, k)[coord]).abs();
                worst = worst.max(inc / span);
                k += len;
            }
            len /= 2;
        }
        worst
    };
    let ratios: Vec<f64> = (0..ens.n_paths).into_par_iter().map(sup_ratio).collect();
    let mut calib: Vec<f64> = ratios.iter().step_by(2).copied().collect();
    calib.sort_by(f64::total_cmp);
    let idx = ((quantile * calib.len() as f64).ceil() as usize).clamp(1, calib.len()) - 1;
    let constant = calib[idx];
    let test: Vec<f64> = ratios.iter().skip(1).step_by(2).copied().collect();
    let violations = test.iter().filter(|r| **r > constant).count();
    Ok(HolderReport { exponent, quantile, constant, violation_fraction: violations as f64 / test.len() as f64 })
}

//! Marginal agreement between the Fokker-Planck and particle descriptions, the
//! approximation pipeline and flow-level checks.

mod dictionary;
mod pipeline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::fpe::{solve_fpe, FpeOptions, Scheme};
use crate::grid::{Grid, TimeGrid};
use crate::lagrangian::{simulate_ensemble, InitialLaw, Observable, PathEnsemble};

pub use dictionary::{dictionary, dictionary_lipschitz, DictionaryEntry, DICTIONARY_SIZE, DICTIONARY_VERSION};
pub use pipeline::{approximation_pipeline, mollification_ladder, ApproximationOutcome, ApproximationStage, LimitMetrics};

/// `int_a^b |g|` for `g` linear with end values `ga`, `gb`.
fn abs_linear_integral(ga: f64, gb: f64, len: f64) -> f64 {
    if ga * gb >= 0.0 {
        0.5 * (ga.abs() + gb.abs()) * len
    } else {
        0.5 * (ga * ga + gb * gb) / (ga.abs() + gb.abs()) * len
    }
}

/// Exact `W_1` between weighted samples and a one-dimensional grid density read
/// as a histogram (uniform on each cell). Both sides are normalized to mass one.
pub fn wasserstein_1d(samples: &[(f64, f64)], grid: &Grid, u: &[f64]) -> Result<f64> {
    if grid.dim != 1 {
        return Err(Error::Precondition("wasserstein_1d needs a one-dimensional grid".into()));
    }
    let wsum: f64 = samples.iter().map(|s| s.1).sum();
    let mass: f64 = u.iter().sum();
    if !(wsum > 0.0) || !(mass > 0.0) {
        return Err(Error::Precondition("both measures need positive mass".into()));
    }
    let mut pts: Vec<(f64, f64)> = samples.iter().filter(|s| s.1 > 0.0).map(|&(x, w)| (x, w / wsum)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let h = grid.spacing();
    let n = u.len();
    let lo = grid.coord(0) - 0.5 * h;
    // cell edges e_k = lo + k h, CDF G(e_k) = cum[k]
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for v in u {
        cum.push(cum.last().unwrap() + v / mass);
    }
    let g_at = |x: f64| -> f64 {
        if x <= lo {
            return 0.0;
        }
        let s = (x - lo) / h;
        let k = s.floor() as usize;
        if k >= n {
            return 1.0;
        }
        cum[k] + (s - k as f64) * (cum[k + 1] - cum[k])
    };
    let mut breaks: Vec<f64> = (0..=n).map(|k| lo + k as f64 * h).collect();
    breaks.extend(pts.iter().map(|p| p.0));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    let mut f = 0.0;
    let mut next = 0;
    for w in breaks.windows(2) {
        while next < pts.len() && pts[next].0 <= w[0] {
            f += pts[next].1;
            next += 1;
        }
        total += abs_linear_integral(f - g_at(w[0]), f - g_at(w[1]), w[1] - w[0]);
    }
    Ok(total)
}

/// `sup_f |int f dnu - sum_p w_p f(X_p)|` over the dictionary, with `nu` normalized.
pub fn dictionary_distance(entries: &[DictionaryEntry], grid: &Grid, u: &[f64], points: &[Vec<f64>], weights: &[f64]) -> f64 {
    let mass = grid.integrate(u);
    entries
        .par_iter()
        .map(|e| {
            let grid_mean = grid.integrate(&grid.sample(|x| e.value(x)).iter().zip(u).map(|(f, v)| f * v).collect::<Vec<_>>()) / mass;
            let mc: f64 = points.iter().zip(weights).map(|(x, w)| w * e.value(x)).sum();
            (grid_mean - mc).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Distance between the grid density `u` and the marginal at node `k`: exact
/// `W_1` in one dimension, the dictionary distance otherwise.
pub fn marginal_distance(ens: &PathEnsemble, k: usize, grid: &Grid, u: &[f64]) -> Result<f64> {
    if grid.dim == 1 {
        wasserstein_1d(&ens.marginal_coordinate(k, 0), grid, u)
    } else {
        let entries = dictionary(grid.dim, grid.half_width);
        let points: Vec<Vec<f64>> = (0..ens.n_paths).map(|p| ens.state(p, k).to_vec()).collect();
        Ok(dictionary_distance(&entries, grid, u, &points, &ens.weights))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperposeConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub steps: usize,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    /// Scheme part of the tolerance.
    pub tau_scheme: f64,
    pub scheme: Scheme,
}

impl Default for SuperposeConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 0,
            steps: 256,
            horizon: 1.0,
            checkpoints: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            tau_scheme: 0.005,
            scheme: Scheme::Explicit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDistance {
    pub time: f64,
    pub distance: f64,
    pub tau_scheme: f64,
    pub tau_mc: f64,
    pub tau: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperposeReport {
    pub field: String,
    /// `"w1"` or the dictionary version.
    pub metric: String,
    pub checkpoints: Vec<CheckpointDistance>,
    pub mass_drift: f64,
    pub exit_fraction: f64,
    pub pass: bool,
}

impl SuperposeReport {
    pub fn max_distance(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.distance).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,distance,tau_scheme,tau_mc,tau,pass\n");
        for c in &self.checkpoints {
            s.push_str(&format!("{},{},{},{},{},{}\n", c.time, c.distance, c.tau_scheme, c.tau_mc, c.tau, c.pass));
        }
        s
    }
}

/// Solve the Fokker-Planck equation and simulate an ensemble from the same `u0`,
/// then compare the marginals at each checkpoint.
pub fn superpose_check(field: &CoefficientField, grid: &Grid, u0: &[f64], config: &SuperposeConfig) -> Result<SuperposeReport> {
    let tg = TimeGrid::new(config.horizon, config.steps)?;
    let nodes = config.checkpoints.iter().map(|t| tg.index_of(*t)).collect::<Result<Vec<_>>>()?;
    let nu = solve_fpe(field, u0, &tg, grid, &FpeOptions::with_scheme(config.scheme))?;
    let law = InitialLaw::GridDensity { grid: grid.clone(), values: u0.to_vec() };
    let ens = simulate_ensemble(field, &law, tg, config.n_paths, config.seed, Some(grid))?;
    let (metric, lip) = if grid.dim == 1 {
        ("w1".to_string(), 1.0)
    } else {
        (DICTIONARY_VERSION.to_string(), dictionary_lipschitz(&dictionary(grid.dim, grid.half_width)))
    };
    let tau_mc = 4.0 * lip / (config.n_paths as f64).sqrt();
    let checkpoints = nodes
        .iter()
        .map(|&k| {
            let distance = marginal_distance(&ens, k, grid, nu.at(k))?;
            let tau = config.tau_scheme + tau_mc;
            Ok(CheckpointDistance { time: tg.node(k), distance, tau_scheme: config.tau_scheme, tau_mc, tau, pass: distance <= tau })
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = checkpoints.iter().all(|c| c.pass);
    Ok(SuperposeReport { field: field.name.clone(), metric, checkpoints, mass_drift: nu.mass_drift(), exit_fraction: ens.exit_fraction(), pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChapmanKolmogorovReport {
    /// `L^1` distance between the direct and the restarted Fokker-Planck runs at `t`.
    pub defect: f64,
    /// The same comparison for two ensembles, when requested.
    pub ensemble_defect: Option<f64>,
    pub direct: Vec<f64>,
    pub composed: Vec<f64>,
}

/// Options for [`chapman_kolmogorov_check`]; `n_paths = 0` skips the ensembles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChapmanKolmogorovConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for ChapmanKolmogorovConfig {
    fn default() -> Self {
        Self { dt: 1.0 / 128.0, scheme: Scheme::Explicit, n_paths: 0, seed: 0 }
    }
}

fn steps_between(a: f64, b: f64, dt: f64) -> Result<usize> {
    let n = ((b - a) / dt).round();
    if (n * dt - (b - a)).abs() > 1e-9 * dt.max(b - a) {
        return Err(Error::Precondition(format!("[{a}, {b}] is not a whole number of steps of {dt}")));
    }
    Ok(n as usize)
}

fn run_segment(field: &CoefficientField, grid: &Grid, u: &[f64], from: f64, to: f64, cfg: &ChapmanKolmogorovConfig) -> Result<Vec<f64>> {
    let steps = steps_between(from, to, cfg.dt)?;
    if steps == 0 {
        return Ok(u.to_vec());
    }
    let tg = TimeGrid::new(to - from, steps)?;
    let nu = solve_fpe(&field.shifted(from), u, &tg, grid, &FpeOptions::with_scheme(cfg.scheme))?;
    Ok(nu.final_density().to_vec())
}

fn simulate_segment(
    field: &CoefficientField,
    grid: &Grid,
    u: &[f64],
    from: f64,
    to: f64,
    cfg: &ChapmanKolmogorovConfig,
    seed: u64,
) -> Result<PathEnsemble> {
    let steps = steps_between(from, to, cfg.dt)?.max(1);
    let law = InitialLaw::GridDensity { grid: grid.clone(), values: u.to_vec() };
    simulate_ensemble(&field.shifted(from), &law, TimeGrid::new((to - from).max(cfg.dt), steps)?, cfg.n_paths, seed, Some(grid))
}

/// Compare the marginal at `t` of a run started at `r` from `u_r` with that of a
/// run restarted at `s` from the `r -> s` marginal.
pub fn chapman_kolmogorov_check(
    field: &CoefficientField,
    grid: &Grid,
    times: (f64, f64, f64),
    u_r: &[f64],
    config: &ChapmanKolmogorovConfig,
) -> Result<ChapmanKolmogorovReport> {
    let (r, s, t) = times;
    if !(r <= s && s <= t) {
        return Err(Error::Precondition(format!("need r <= s <= t, got {r}, {s}, {t}")));
    }
    let direct = run_segment(field, grid, u_r, r, t, config)?;
    let composed = if s == r {
        direct.clone()
    } else {
        let mid = run_segment(field, grid, u_r, r, s, config)?;
        run_segment(field, grid, &mid, s, t, config)?
    };
    let diff: Vec<f64> = direct.iter().zip(&composed).map(|(a, b)| a - b).collect();
    let defect = grid.norm(&diff, 1.0);
    let ensemble_defect = if config.n_paths > 0 && t > r {
        let a = simulate_segment(field, grid, u_r, r, t, config, config.seed)?;
        let b = if s == r {
            simulate_segment(field, grid, u_r, r, t, config, config.seed + 1)?
        } else {
            let first = simulate_segment(field, grid, u_r, r, s, config, config.seed + 1)?;
            let mid = first.marginal_density(first.steps, grid);
            simulate_segment(field, grid, &mid, s, t, config, config.seed + 2)?
        };
        let ub = b.marginal_density(b.steps, grid);
        Some(marginal_distance(&a, a.steps, grid, &ub)?)
    } else {
        None
    };
    Ok(ChapmanKolmogorovReport { defect, ensemble_defect, direct, composed })
}

/// The ensemble restricted to `[S, T]` with weights multiplied by `rho`, which may
/// only read nodes up to `S` and must have weighted mean one.
pub fn restriction_pushforward(ens: &PathEnsemble, s: f64, rho: &Observable) -> Result<PathEnsemble> {
    let k = ens.node_index(s)?;
    if let Some(&node) = rho.reads.iter().find(|n| **n > k) {
        return Err(Error::Measurability { node, limit: k });
    }
    let values: Vec<f64> = (0..ens.n_paths).map(|p| rho.eval(ens, p)).collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Precondition("rho must be a nonnegative bounded density".into()));
    }
    let mean: f64 = values.iter().zip(&ens.weights).map(|(v, w)| v * w).sum();
    if (mean - 1.0).abs() > 1e-10 {
        return Err(Error::Normalization { mean });
    }
    let weights: Vec<f64> = values.iter().zip(&ens.weights).map(|(v, w)| v * w).collect();
    ens.restrict_from(k)?.with_weights(weights)
}

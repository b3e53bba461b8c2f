//! The experiment runner.

use std::path::PathBuf;

use serde_json::json;

use crate::commutators::{commutator_sweep, dyadic_alphas, time_commutator_sweep, AuditConstants, CommutatorKind, LebesgueExponents};
use crate::energy::{max_energy_increase_rate, uniqueness_audit, AuditConfig};
use crate::error::{Error, Result};
use crate::fields::{KernelFamily, NORM_DIV_NEG};
use crate::fpe::{gaussian_density, solve_fpe, FpeOptions};
use crate::lagrangian::{martingale_defect, quadratic_variation_check, simulate_ensemble, tightness_report, InitialLaw, Observable};
use crate::superposition::{mollification_ladder, superpose_check, SuperposeConfig};
use crate::testfn::TestFunction;

use super::config::{CommutatorChoice, ExperimentConfig, ExperimentKind};
use super::snapshot::{curve_to_snapshot, ensemble_to_snapshot, sidecar_path};
use super::{jsonl_report, write_atomic, Criterion};

/// A named output file held in memory until the experiment has finished.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: &str, s: String) -> Self {
        Self { name: name.into(), bytes: s.into_bytes() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub criteria: Vec<Criterion>,
    pub written: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    /// Process exit status: 0 iff every criterion passes.
    pub fn exit_code(&self) -> i32 {
        if self.pass() {
            0
        } else {
            1
        }
    }
}

/// Run one experiment and write its artifacts into `config.output`. Nothing is
/// written when the experiment fails; a failed write removes what was already
/// written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let (criteria, artifacts) = match config.kind {
        ExperimentKind::Noop => return Ok(RunOutcome { criteria: Vec::new(), written: Vec::new() }),
        ExperimentKind::SolveFpe => solve(config)?,
        ExperimentKind::Simulate => simulate(config)?,
        ExperimentKind::Superpose => superpose(config)?,
        ExperimentKind::Commutator => commutator(config)?,
        ExperimentKind::Energy => energy(config)?,
        ExperimentKind::Pipeline => pipeline(config)?,
    };
    let mut all = artifacts;
    all.push(Artifact::text("report.jsonl", jsonl_report(config, &criteria, &[])));
    let mut written = Vec::new();
    for a in &all {
        let path = config.output.join(&a.name);
        if let Err(e) = write_atomic(&path, &a.bytes) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(RunOutcome { criteria, written })
}

/// Scheme differences below this are treated as zero.
const ROUNDOFF_FLOOR: f64 = 1e-12;

type Staged = (Vec<Criterion>, Vec<Artifact>);

fn solve(config: &ExperimentConfig) -> Result<Staged> {
    let field = config.field.build()?;
    let grid = config.build_grid()?;
    let tg = config.build_timegrid()?;
    let u0 = config.initial_density(&grid);
    let nu = solve_fpe(&field, &u0, &tg, &grid, &FpeOptions::with_scheme(config.scheme))?;
    let criteria = vec![
        Criterion::at_most("mass drift", nu.mass_drift(), config.tolerances.mass.max(1e-8)),
        Criterion::at_least("minimum density", nu.min_value(), 0.0),
    ];
    let (snap, sidecar) = curve_to_snapshot(&nu);
    let rows: Vec<serde_json::Value> = nu.log.iter().map(|row| json!({ "record": "step", "step": row })).collect();
    let steps = jsonl_report(config, &[], &rows);
    let name = "curve.fplb";
    Ok((
        criteria,
        vec![
            Artifact { name: name.into(), bytes: snap.to_bytes() },
            Artifact::text(&sidecar_name(name), sidecar.to_json()),
            Artifact::text("steps.jsonl", steps),
        ],
    ))
}

fn sidecar_name(name: &str) -> String {
    sidecar_path(std::path::Path::new(name)).to_string_lossy().into_owned()
}

fn simulate(config: &ExperimentConfig) -> Result<Staged> {
    let field = config.field.build()?;
    let grid = config.build_grid()?;
    let tg = config.build_timegrid()?;
    let d = grid.dim;
    let law = InitialLaw::Gaussian { mean: vec![config.initial.mean; d], cov: identity_scaled(d, config.initial.var) };
    let ens = simulate_ensemble(&field, &law, tg, config.n_paths, config.seed, Some(&grid))?;
    let horizon = config.time.horizon;
    let half = tg.node(tg.steps / 2);
    let z_max = config.tolerances.z_max;
    let mut rows = vec![];
    for j in 0..d {
        let f = TestFunction::coordinate(d, j);
        rows.push((format!("martingale x{j} [0,T]"), martingale_defect(&ens, &field, &f, 0.0, horizon, &Observable::constant(1.0))?));
        let sign = Observable::sign_at(tg.steps / 2, j);
        rows.push((format!("martingale x{j} [T/2,T] sign"), martingale_defect(&ens, &field, &f, half, horizon, &sign)?));
        rows.push((format!("quadratic variation x{j}"), quadratic_variation_check(&ens, &field, &f, horizon)?));
    }
    let half_square = TestFunction::half_square(d);
    rows.push(("martingale |x|^2/2 [0,T]".into(), martingale_defect(&ens, &field, &half_square, 0.0, horizon, &Observable::constant(1.0))?));
    let mut criteria: Vec<Criterion> = rows.iter().map(|(name, s)| Criterion::at_most(format!("{name} z-score"), s.z_score(), z_max)).collect();
    let mut csv = String::from("statistic,value,se,threshold,pass\n");
    for (name, s) in &rows {
        csv.push_str(&format!("{name},{:e},{:e},{z_max},{}\n", s.value, s.se, s.z_score() <= z_max));
    }
    let profile = config.profile.tightness()?;
    let bump = TestFunction::gaussian_bump(vec![0.0; d], 1.0, 1.0);
    let tight = tightness_report(&ens, &field, &bump, &profile)?;
    criteria.push(Criterion::at_most("tightness lhs - rhs - 3 se", tight.lhs.value - tight.rhs.value - 3.0 * tight.margin.se, 0.0));
    csv.push_str(&format!("tightness margin,{:e},{:e},0,{}\n", tight.margin.value, tight.margin.se, criteria.last().unwrap().pass));
    let (snap, sidecar) = ensemble_to_snapshot(&ens);
    let name = "ensemble.fplb";
    Ok((
        criteria,
        vec![
            Artifact { name: name.into(), bytes: snap.to_bytes() },
            Artifact::text(&sidecar_name(name), sidecar.to_json()),
            Artifact::text("diagnostics.csv", csv),
        ],
    ))
}

fn identity_scaled(d: usize, c: f64) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        a[i * d + i] = c;
    }
    a
}

fn superpose(config: &ExperimentConfig) -> Result<Staged> {
    let field = config.field.build()?;
    let grid = config.build_grid()?;
    let u0 = config.initial_density(&grid);
    let sc = SuperposeConfig {
        n_paths: config.n_paths,
        seed: config.seed,
        steps: config.time.steps,
        horizon: config.time.horizon,
        checkpoints: config.checkpoints.clone(),
        tau_scheme: config.tolerances.tau_scheme,
        scheme: config.scheme,
    };
    let rep = superpose_check(&field, &grid, &u0, &sc)?;
    let criteria = rep
        .checkpoints
        .iter()
        .map(|c| Criterion::at_most(format!("{} at t = {}", rep.metric, c.time), c.distance, c.tau))
        .collect();
    Ok((criteria, vec![Artifact::text("checkpoints.csv", rep.to_csv())]))
}

fn commutator(config: &ExperimentConfig) -> Result<Staged> {
    let field = config.field.build()?;
    let grid = config.build_grid()?;
    let u = config.initial_density(&grid);
    let l = grid.half_width;
    let f = grid.sample(|x| x.iter().map(|v| (std::f64::consts::PI * v / l).cos()).product());
    let alphas = dyadic_alphas(config.alpha_from, config.alpha_to);
    let constants = AuditConstants::default();
    let sweep = match config.commutator {
        CommutatorChoice::Drift | CommutatorChoice::Diffusion => {
            let kind = if config.commutator == CommutatorChoice::Drift { CommutatorKind::Drift } else { CommutatorKind::Diffusion };
            commutator_sweep(kind, &field, &grid, 0.0, &u, &f, &alphas, &LebesgueExponents::l2(), &constants)?
        }
        CommutatorChoice::Time => {
            let tg = config.build_timegrid()?;
            let n = tg.steps + 1;
            // a time-constant pair would make the value an exact time derivative
            let us: Vec<f64> = (0..n).flat_map(|k| u.iter().map(move |v| v * (1.0 + tg.node(k)))).collect();
            let fs: Vec<f64> = (0..n).flat_map(|_| f.iter().copied()).collect();
            time_commutator_sweep(&field, &grid, &tg, &us, &fs, &alphas, &constants)?
        }
    };
    let mut criteria: Vec<Criterion> = sweep
        .alphas
        .iter()
        .zip(&sweep.points)
        .map(|(a, p)| Criterion::at_most(format!("commutator at alpha = {a:e}"), p.controlled(), p.bound))
        .collect();
    criteria.push(Criterion { name: "tightest constant".into(), value: sweep.tightest_constant, threshold: f64::INFINITY, pass: true });
    Ok((criteria, vec![Artifact::text("sweep.csv", sweep.to_csv())]))
}

fn energy(config: &ExperimentConfig) -> Result<Staged> {
    let field = config.field.build()?;
    let (m, v) = (config.initial.mean, config.initial.var);
    let audit = AuditConfig {
        r: config.profile.r,
        regime: config.profile.regime,
        half_width: config.grid.half_width,
        boundary: config.grid.boundary,
        horizon: config.time.horizon,
        resolutions: config.resolutions.clone(),
        base_steps: config.time.steps,
        schemes: (crate::fpe::Scheme::Explicit, crate::fpe::Scheme::SemiImplicit),
        perturbation: 1e-3,
    };
    let rep = uniqueness_audit(&field, &|x| gaussian_density(x, m, v), &audit)?;
    // differences at round-off level (e.g. a stationary start) count as converged
    let mut criteria: Vec<Criterion> = rep
        .ratios
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut c = Criterion::at_least(format!("refinement ratio {}", i + 1), *r, config.tolerances.refinement_ratio);
            c.pass |= rep.differences[i + 1] <= ROUNDOFF_FLOOR;
            c
        })
        .collect();
    if let Some(p) = &rep.perturbation {
        criteria.push(Criterion::at_most("perturbation growth", p.measured, p.predicted_bound * (1.0 + 1e-12) + p.scheme_error));
    }
    let declared = field.declared_on(config.time.horizon, config.grid.half_width);
    if declared.declared_norms.get(NORM_DIV_NEG) == Some(&0.0) {
        let grid = config.build_grid()?;
        let nu = solve_fpe(&field, &config.initial_density(&grid), &config.build_timegrid()?, &grid, &FpeOptions::with_scheme(config.scheme))?;
        let beta = config.profile.energy()?;
        criteria.push(Criterion::at_most(format!("energy increase rate ({})", beta.name), max_energy_increase_rate(&nu, &beta), 1e-6));
    }
    let audit_line = json!({ "record": "audit", "report": rep });
    Ok((criteria, vec![Artifact::text("audit.jsonl", jsonl_report(config, &[], &[audit_line]))]))
}

fn pipeline(config: &ExperimentConfig) -> Result<Staged> {
    let field = config.field.build()?;
    let grid = config.build_grid()?;
    let nu = solve_fpe(&field, &config.initial_density(&grid), &config.build_timegrid()?, &grid, &FpeOptions::with_scheme(config.scheme))?;
    let ladder = mollification_ladder(&field, &nu, KernelFamily::Gaussian, &config.scales, config.tolerances.residual)?;
    let mut csv = String::from("scale,limit_metric\n");
    for (s, m) in &ladder {
        csv.push_str(&format!("{s:e},{m:e}\n"));
    }
    let criteria = ladder
        .windows(2)
        .map(|w| {
            let ratio = if w[0].1 == 0.0 { 0.0 } else { w[1].1 / w[0].1 };
            Criterion::at_most(format!("limit metric ratio {:e} -> {:e}", w[0].0, w[1].0), ratio, config.tolerances.ladder_factor)
        })
        .collect();
    if ladder.is_empty() {
        return Err(Error::Config("scales must not be empty".into()));
    }
    Ok((criteria, vec![Artifact::text("ladder.csv", csv)]))
}

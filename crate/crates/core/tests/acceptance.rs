//! Acceptance criteria, one line each. Runs as a plain binary under `cargo test`.

use std::f64::consts::PI;
use std::time::Instant;

use fplab::commutators::{
    commutator_sweep, dyadic_alphas, self_smoothing_diffusion, time_commutator_sweep, AuditConstants, CommutatorKind,
    LebesgueExponents,
};
use fplab::energy::{gronwall_bound, max_energy_increase_rate, uniqueness_audit, AuditConfig, EnergyProfile, Regime};
use fplab::fields::{jensen_functional, Convolver, KernelFamily, MollifierKernel};
use fplab::fpe::{gaussian_density, solve_backward_kolmogorov, solve_fpe, FpeOptions, Scheme};
use fplab::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use fplab::lagrangian::{
    delta_for_epsilon, martingale_defect, modulus_functional, quadratic_variation_check, simulate_ensemble, Gauge, InitialLaw,
    Observable, PathEnsemble, Statistic, TightnessProfile,
};
use fplab::smoothing::{gradient_ratio, second_order_ratio};
use fplab::superposition::{restriction_pushforward, superpose_check, SuperposeConfig};
use fplab::{Boundary, CoefficientField, Grid, TestFunction, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bump(g: &Grid, c: f64, w: f64) -> Vec<f64> {
    let v = g.sample(|x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp());
    let n = g.norm(&v, 2.0);
    v.iter().map(|x| x / n).collect()
}

fn superposition() -> Outcome {
    let g = Grid::absorbing_1d(8.0, 512).map_err(|e| e.to_string())?;
    let cfg = SuperposeConfig { n_paths: 100_000, steps: 256, horizon: 1.0, ..Default::default() };
    let mut notes = Vec::new();
    let mut ok = true;
    for (field, var) in [(CoefficientField::ou(1, 1.0, 2.0), 1.0), (CoefficientField::heat(1, 1.0), 0.25)] {
        let start = Instant::now();
        let u0 = g.sample(|x| gaussian_density(x, 0.0, var));
        let rep = superpose_check(&field, &g, &u0, &cfg).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        ok &= rep.max_distance() <= 0.02 && secs <= 120.0;
        notes.push(format!("{}: max W1 {:.4} in {secs:.1}s", field.name, rep.max_distance()));
    }
    check(ok, notes.join("; "))
}

fn drift_corpus() -> Vec<CoefficientField> {
    let b = |name: &'static str, f: fn(f64) -> f64| CoefficientField::from_fns(name, 1, |_, _, a| a[0] = 0.0, move |_, x, b| b[0] = f(x[0]));
    vec![
        b("sin", |x| x.sin()),
        b("cos2", |x| (2.0 * x).cos()),
        b("mix", |x| x.sin() + 0.5 * (3.0 * x).cos()),
        b("tanh", |x| (2.0 * x.sin()).tanh()),
        b("inv", |x| 1.0 / (2.0 + x.cos())),
        b("sq", |x| x.sin().powi(2)),
        b("exp", |x| x.cos().exp() - 1.0),
        b("sin3", |x| (3.0 * x).sin()),
        b("prod", |x| x.sin() * (2.0 * x).cos()),
        b("atan", |x| (2.0 * x.cos()).atan()),
    ]
}

fn commutator_drift_sweeps() -> Outcome {
    let g = Grid::periodic_1d(PI, 256).map_err(|e| e.to_string())?;
    let alphas = dyadic_alphas(2, 10);
    let mut tightest = 0.0f64;
    let mut worst_decay = 0.0f64;
    let mut ok = true;
    for (i, field) in drift_corpus().iter().enumerate() {
        let u = bump(&g, -1.0 + 0.2 * i as f64, 0.4 + 0.05 * i as f64);
        let f = bump(&g, 0.5 - 0.15 * i as f64, 0.6);
        let s = commutator_sweep(CommutatorKind::Drift, field, &g, 0.0, &u, &f, &alphas, &LebesgueExponents::l2(), &AuditConstants::default())
            .map_err(|e| e.to_string())?;
        ok &= s.all_within_bound() && s.decay_ratio() <= 0.05;
        tightest = tightest.max(s.tightest_constant);
        worst_decay = worst_decay.max(s.decay_ratio());
    }
    check(ok, format!("10 triples; worst decay ratio {worst_decay:.4}; tightest constant {tightest:.4}"))
}

fn commutator_diffusion_sweeps() -> Outcome {
    let g = Grid::periodic_1d(PI, 256).map_err(|e| e.to_string())?;
    let alphas = dyadic_alphas(2, 10);
    let a = |name: &'static str, f: fn(f64) -> f64| {
        CoefficientField::from_fns(name, 1, move |_, x, a| a[0] = f(x[0]), |_, _, b| b[0] = 0.0).with_lambda(0.5)
    };
    let corpus = [
        a("cos", |x| 2.0 + x.cos()),
        a("sin2", |x| 1.5 + 0.5 * (2.0 * x).sin()),
        a("mix", |x| 2.0 + 0.5 * x.sin() + 0.3 * (3.0 * x).cos()),
        a("exp", |x| x.cos().exp()),
        a("inv", |x| 1.0 + 1.0 / (2.0 + x.sin())),
    ];
    let mut ok = true;
    let mut tightest = 0.0f64;
    let mut worst_decay = 0.0f64;
    for (i, field) in corpus.iter().enumerate() {
        let u = bump(&g, 0.3 * i as f64 - 0.5, 0.5);
        let f = bump(&g, -0.2 * i as f64, 0.45);
        let s = commutator_sweep(CommutatorKind::Diffusion, field, &g, 0.0, &u, &f, &alphas, &LebesgueExponents::l2(), &AuditConstants::default())
            .map_err(|e| e.to_string())?;
        ok &= s.all_within_bound();
        tightest = tightest.max(s.tightest_constant);
        let wide = bump(&g, 0.3 * i as f64 - 0.5, 1.0);
        let hi = self_smoothing_diffusion(field, &g, 0.0, &wide, 0.25).map_err(|e| e.to_string())?.abs();
        let lo = self_smoothing_diffusion(field, &g, 0.0, &wide, 2f64.powi(-10)).map_err(|e| e.to_string())?.abs();
        ok &= lo <= 0.05 * hi;
        worst_decay = worst_decay.max(lo / hi);
    }
    check(ok, format!("5 fields; self-smoothing decay {worst_decay:.2e}; tightest constant {tightest:.4}"))
}

fn commutator_time_sweep() -> Outcome {
    let g = Grid::periodic_1d(PI, 64).map_err(|e| e.to_string())?;
    let tg = TimeGrid::new(1.0, 32).map_err(|e| e.to_string())?;
    let space_time = |c: f64| -> Vec<f64> {
        (0..=tg.steps)
            .flat_map(|k| {
                let t = tg.node(k);
                g.sample(move |x| (-(x[0] - c - 0.5 * t).powi(2)).exp())
            })
            .collect()
    };
    let (u, f) = (space_time(0.2), space_time(-0.4));
    let alphas = dyadic_alphas(2, 10);
    let k = AuditConstants::default();
    let moving = time_commutator_sweep(&CoefficientField::time_periodic(0.5, 0.5), &g, &tg, &u, &f, &alphas, &k).map_err(|e| e.to_string())?;
    let frozen = CoefficientField::from_fns("frozen", 1, |_, x, a| a[0] = 1.0 + 0.25 * x[0].cos(), |_, _, b| b[0] = 0.0).with_lambda(0.75);
    let still = time_commutator_sweep(&frozen, &g, &tg, &u, &f, &alphas, &k).map_err(|e| e.to_string())?;
    let zero = still.points.iter().map(|p| p.value.abs()).fold(0.0, f64::max);
    check(
        moving.all_within_bound() && zero <= 1e-5,
        format!("tightest constant {:.4}; frozen max |value| {zero:.2e}", moving.tightest_constant),
    )
}

fn smoothing_inequalities() -> Outcome {
    let g = Grid::periodic_1d(PI, 512).map_err(|e| e.to_string())?;
    let corpus = [bump(&g, 0.0, 0.3), bump(&g, 1.0, 0.1), g.sample(|x| x[0].sin() + 0.3 * (5.0 * x[0]).cos()), g.sample(|x| (x[0].abs() < 1.0) as u8 as f64)];
    let limit = (2.0 * std::f64::consts::E).powf(-0.5) + 1e-3;
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for f in &corpus {
        for alpha in dyadic_alphas(0, 12) {
            worst1 = worst1.max(gradient_ratio(&g, f, alpha, 2.0).map_err(|e| e.to_string())?);
            for p in [1.0, 2.0, f64::INFINITY] {
                worst2 = worst2.max(second_order_ratio(&g, f, alpha, 0, 0, p).map_err(|e| e.to_string())?);
            }
        }
    }
    check(worst1 <= limit && worst2 <= 2.0, format!("gradient ratio {worst1:.5} (limit {limit:.5}); second order {worst2:.4}"))
}

fn energy_gronwall() -> Outcome {
    let g = Grid::absorbing_1d(8.0, 256).map_err(|e| e.to_string())?;
    let tg = TimeGrid::new(1.0, 64).map_err(|e| e.to_string())?;
    let u0 = g.sample(|x| gaussian_density(x, 0.5, 0.3));
    let betas = [EnergyProfile::square(), EnergyProfile::power_r(1.5).map_err(|e| e.to_string())?];
    let mut worst = 0.0f64;
    let no_div = [CoefficientField::heat(1, 1.0), CoefficientField::linear_drift(vec![0.5], 1.0)];
    for field in &no_div {
        for scheme in [Scheme::Explicit, Scheme::SemiImplicit] {
            let nu = solve_fpe(field, &u0, &tg, &g, &FpeOptions::with_scheme(scheme)).map_err(|e| e.to_string())?;
            for beta in &betas {
                worst = worst.max(max_energy_increase_rate(&nu, beta));
            }
        }
    }
    let mut ok = worst <= 1e-6;
    let mut notes = vec![format!("max energy increase rate {worst:.2e}")];
    for field in [CoefficientField::heat(1, 1.0), CoefficientField::ou(1, 1.0, 2.0)] {
        let cfg = AuditConfig { resolutions: vec![256], ..Default::default() };
        let rep = uniqueness_audit(&field, &|x| gaussian_density(x, 0.5, 0.5), &cfg).map_err(|e| e.to_string())?;
        let p = rep.perturbation.ok_or("no perturbation run")?;
        let bound = gronwall_bound(p.initial_norm, &field.declared_on(1.0, 8.0), 2.0, Regime::Degenerate).map_err(|e| e.to_string())?;
        ok &= p.passes && (bound.value - p.predicted_bound).abs() <= 1e-12 * bound.value;
        notes.push(format!("{}: growth {:.3e} <= {:.3e} + {:.1e}", field.name, p.measured, p.predicted_bound, p.scheme_error));
    }
    check(ok, notes.join("; "))
}

fn uniqueness_shadow() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let fields = [CoefficientField::ou(1, 1.0, 2.0), CoefficientField::sobolev_rough_1d(1.0, 0.5, 16.0 / 512.0, 1.0)];
    for field in &fields {
        let cfg = AuditConfig { perturbation: 0.0, ..Default::default() };
        let rep = uniqueness_audit(field, &|x| gaussian_density(x, 0.5, 0.5), &cfg).map_err(|e| e.to_string())?;
        ok &= rep.converges(1.7);
        notes.push(format!("{}: ratios {:?}", field.name, rep.ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()));
    }
    check(ok, notes.join("; "))
}

fn tightness() -> Outcome {
    let sq = Gauge::square();
    let cases = [
        (delta_for_epsilon(&sq, 1, 0.5).map_err(|e| e.to_string())?, 8),
        (delta_for_epsilon(&sq, 2, 0.5).map_err(|e| e.to_string())?, 32),
        (delta_for_epsilon(&sq, 1, 2.0).map_err(|e| e.to_string())?, 1),
    ];
    let delta_ok = cases.iter().all(|(a, b)| a == b);
    let tg = TimeGrid::new(1.0, 128).map_err(|e| e.to_string())?;
    let ens = simulate_ensemble(&CoefficientField::heat(1, 1.0), &InitialLaw::PointMass { x: vec![0.0] }, tg, 100_000, 11, None)
        .map_err(|e| e.to_string())?;
    let profile = TightnessProfile::new(Gauge::capped_abs(), Gauge::square(), Gauge::square(), 5).map_err(|e| e.to_string())?;
    let rep = modulus_functional(&ens, &profile, 0).map_err(|e| e.to_string())?;
    let ok = delta_ok && rep.mean_psi.value <= rep.rhs.value + 3.0 * rep.mean_psi.se;
    check(ok, format!("delta rule {cases:?}; mean psi {:.4} +- {:.4} vs rhs {:.4}", rep.mean_psi.value, rep.mean_psi.se, rep.rhs.value))
}

fn martingale_tests() -> [TestFunction; 3] {
    [TestFunction::coordinate(1, 0), TestFunction::half_square(1), TestFunction::gaussian_bump(vec![0.3], 0.7, 1.0)]
}

/// Conditions on `X_{1/2} > 0` via the restriction push-forward.
fn restrict_positive(ens: &PathEnsemble) -> Result<PathEnsemble, String> {
    let k = ens.node_index(0.5).map_err(|e| e.to_string())?;
    let p_pos: f64 = (0..ens.n_paths).filter(|p| ens.state(*p, k)[0] > 0.0).map(|p| ens.weights[p]).sum();
    let rho = Observable::new(vec![k], move |x| if x[0] > 0.0 { 1.0 / p_pos } else { 0.0 });
    restriction_pushforward(ens, 0.5, &rho).map_err(|e| e.to_string())
}

/// All defect statistics for one ensemble: unconditional, with a sign
/// observable, and after conditioning.
fn defects(ens: &PathEnsemble, field: &CoefficientField, qv: bool) -> Result<Vec<Statistic>, String> {
    let cond = restrict_positive(ens)?;
    let mut out = Vec::new();
    for f in &martingale_tests() {
        let k = ens.node_index(0.5).map_err(|e| e.to_string())?;
        out.push(martingale_defect(ens, field, f, 0.0, 1.0, &Observable::constant(1.0)).map_err(|e| e.to_string())?);
        out.push(martingale_defect(ens, field, f, 0.5, 1.0, &Observable::sign_at(k, 0)).map_err(|e| e.to_string())?);
        out.push(martingale_defect(&cond, field, f, 0.5, 1.0, &Observable::constant(1.0)).map_err(|e| e.to_string())?);
        if qv {
            out.push(quadratic_variation_check(ens, field, f, 1.0).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn martingale_diagnostics() -> Outcome {
    let tg = TimeGrid::new(1.0, 64).map_err(|e| e.to_string())?;
    let stochastic = [
        (CoefficientField::heat(1, 1.0), InitialLaw::PointMass { x: vec![0.0] }),
        (CoefficientField::ou(1, 1.0, 2.0), InitialLaw::Gaussian { mean: vec![1.0], cov: vec![0.5] }),
    ];
    let mut worst = 0.0f64;
    for (i, (field, law)) in stochastic.iter().enumerate() {
        let ens = simulate_ensemble(field, law, tg, 40_000, 100 + i as u64, None).map_err(|e| e.to_string())?;
        for st in defects(&ens, field, true)? {
            worst = worst.max(st.z_score());
        }
    }
    // With a = 0 the martingale is constant along paths, so the only defect is
    // time quadrature: it must shrink at second order under refinement.
    let flow = CoefficientField::linear_drift(vec![1.0], 0.0);
    let law = InitialLaw::Gaussian { mean: vec![0.0], cov: vec![1.0] };
    let run = |steps: usize| -> Result<Vec<Statistic>, String> {
        let tg = TimeGrid::new(1.0, steps).map_err(|e| e.to_string())?;
        let ens = simulate_ensemble(&flow, &law, tg, 40_000, 7, None).map_err(|e| e.to_string())?;
        defects(&ens, &flow, false)
    };
    let (coarse, fine) = (run(64)?, run(256)?);
    let mut slowest = f64::INFINITY;
    let mut largest = 0.0f64;
    for (c, f) in coarse.iter().zip(&fine) {
        largest = largest.max(c.value.abs());
        if c.value.abs() > 1e-12 {
            slowest = slowest.min(c.value.abs() / f.value.abs().max(1e-300));
        }
    }
    check(
        worst <= 4.0 && slowest >= 8.0,
        format!("max z-score {worst:.3}; deterministic flow defect {largest:.1e} shrinking x{slowest:.1} per 4x steps"),
    )
}

fn duality() -> Outcome {
    let g = Grid::absorbing_1d(8.0, 256).map_err(|e| e.to_string())?;
    let tg = TimeGrid::new(0.5, 64).map_err(|e| e.to_string())?;
    let (m0, v0) = (0.5, 0.3);
    let u0 = g.sample(|x| gaussian_density(x, m0, v0));
    let t = 0.5f64;
    // closed-form marginals at T: (mean, variance)
    let ou_decay = (-t).exp();
    let corpus: [(CoefficientField, (f64, f64)); 3] = [
        (CoefficientField::heat(1, 1.0), (m0, v0 + t)),
        (CoefficientField::ou(1, 1.0, 2.0), (m0 * ou_decay, v0 * ou_decay * ou_decay + (1.0 - ou_decay * ou_decay))),
        (CoefficientField::linear_drift(vec![0.7], 0.5), (m0 + 0.7 * t, v0 + 0.5 * t)),
    ];
    let ft = g.sample(|x| x[0].sin() + 0.5 * (-(x[0] * x[0])).exp());
    let zero = TestFunction::constant(1, 0.0);
    let mut worst = 0.0f64;
    let mut discrete = 0.0f64;
    for (field, (m, v)) in &corpus {
        let opts = FpeOptions::default();
        let back = solve_backward_kolmogorov(field, &zero, &ft, &tg, &g, &opts).map_err(|e| e.to_string())?;
        let nu = solve_fpe(field, &u0, &tg, &g, &opts).map_err(|e| e.to_string())?;
        let lhs = g.inner(back.at(0), &u0);
        let exact = g.inner(&ft, &g.sample(|x| gaussian_density(x, *m, *v)));
        worst = worst.max((lhs - exact).abs());
        discrete = discrete.max((lhs - g.inner(&ft, nu.final_density())).abs());
    }
    check(worst <= 2e-3 && discrete <= 1e-10, format!("vs closed form {worst:.2e}; discrete identity {discrete:.1e}"))
}

fn jensen() -> Outcome {
    let g = Grid::new(1, 4.0, 96, Boundary::Absorbing).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    for trial in 0..100 {
        let bumps = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let (c, w, c2) = (rng.random_range(-2.0..2.0), rng.random_range(0.2..1.5), rng.random_range(-2.0..2.0));
            let mix: f64 = rng.random_range(0.0..1.0);
            g.sample(|x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp() + mix * (-(x[0] - c2).powi(2)).exp() + 1e-3)
        };
        let (mu, nu) = (bumps(&mut rng), bumps(&mut rng));
        let theta = match trial % 3 {
            0 => |z: f64| z * z,
            1 => |z: f64| z.abs().powi(3),
            _ => |z: f64| if z > 0.0 { z * z.ln() } else { 0.0 },
        };
        let kernel = MollifierKernel::new(if trial % 2 == 0 { KernelFamily::Gaussian } else { KernelFamily::Exponential }, rng.random_range(0.05..0.8), 1)
            .map_err(|e| e.to_string())?;
        let conv = Convolver::new(&g, &kernel).map_err(|e| e.to_string())?;
        let before = jensen_functional(&g, &mu, &nu, theta);
        let after = jensen_functional(&g, &conv.apply(&mu), &conv.apply(&nu), theta);
        worst = worst.min(before - after);
    }
    check(worst >= -1e-8, format!("100 triples; smallest slack {worst:.3e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kinds = [
        ExperimentKind::SolveFpe,
        ExperimentKind::Simulate,
        ExperimentKind::Superpose,
        ExperimentKind::Commutator,
        ExperimentKind::Energy,
        ExperimentKind::Pipeline,
    ];
    let mut files = 0;
    for kind in kinds {
        let mut c = ExperimentConfig { kind, n_paths: 5000, seed: 42, output: dir.path().join(kind.name()), ..Default::default() };
        c.grid.points = 128;
        c.time.steps = 32;
        c.resolutions = vec![64, 128];
        if kind == ExperimentKind::Commutator {
            c.grid.boundary = Boundary::Periodic;
            c.grid.half_width = PI;
        }
        let run = |threads: usize| -> Result<Vec<Vec<u8>>, String> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
            let out = pool.install(|| run_experiment(&c)).map_err(|e| e.to_string())?;
            out.written.iter().map(|p| std::fs::read(p).map_err(|e| e.to_string())).collect()
        };
        let (a, b) = (run(1)?, run(3)?);
        if a != b {
            return Err(format!("{} differs between runs", kind.name()));
        }
        files += a.len();
    }
    Ok(format!("6 experiment kinds, {files} artifacts byte-identical across runs and thread counts"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("superposition", superposition),
        ("commutator drift", commutator_drift_sweeps),
        ("commutator diffusion", commutator_diffusion_sweeps),
        ("commutator time", commutator_time_sweep),
        ("smoothing inequalities", smoothing_inequalities),
        ("energy and Gronwall", energy_gronwall),
        ("uniqueness shadow", uniqueness_shadow),
        ("tightness", tightness),
        ("martingale diagnostics", martingale_diagnostics),
        ("duality", duality),
        ("Jensen contraction", jensen),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

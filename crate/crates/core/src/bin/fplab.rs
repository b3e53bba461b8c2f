use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fplab::harness::{run_experiment, ExperimentConfig, ExperimentKind, THREADS_ENV};

#[derive(Parser)]
#[command(name = "fplab", version, about = "Fokker-Planck and particle experiments for diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Fokker-Planck equation and write the density curve.
    SolveFpe(Shared),
    /// Simulate an SDE ensemble and run the martingale diagnostics.
    Simulate(Shared),
    /// Compare Fokker-Planck and ensemble marginals.
    Superpose(Shared),
    /// Sweep a commutator over the alpha ladder.
    Commutator(Shared),
    /// Uniqueness audit and energy checks.
    Energy(Shared),
    /// Mollification ladder of the approximation pipeline.
    Pipeline(Shared),
    /// Parse and check a config without running anything.
    Validate(Shared),
}

#[derive(Args)]
struct Shared {
    /// JSON experiment config (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted `key=value` assignment applied to the config; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(shared: &Shared, kind: ExperimentKind) -> fplab::Result<ExperimentConfig> {
    let text = match &shared.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => "{}".to_string(),
    };
    let mut config = ExperimentConfig::from_json_with(&text, &shared.overrides)?;
    config.kind = kind;
    if let Some(out) = &shared.out {
        config.output = out.clone();
    }
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let (shared, kind, validate_only) = match &cli.command {
        Command::SolveFpe(s) => (s, ExperimentKind::SolveFpe, false),
        Command::Simulate(s) => (s, ExperimentKind::Simulate, false),
        Command::Superpose(s) => (s, ExperimentKind::Superpose, false),
        Command::Commutator(s) => (s, ExperimentKind::Commutator, false),
        Command::Energy(s) => (s, ExperimentKind::Energy, false),
        Command::Pipeline(s) => (s, ExperimentKind::Pipeline, false),
        Command::Validate(s) => (s, ExperimentKind::Noop, true),
    };
    let result = load(shared, kind).and_then(|config| {
        if validate_only {
            config.validate()?;
            println!("config ok");
            return Ok(0);
        }
        let outcome = run_experiment(&config)?;
        for c in &outcome.criteria {
            println!("{} {}: {:e} (threshold {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        }
        for p in &outcome.written {
            println!("wrote {}", p.display());
        }
        Ok(outcome.exit_code())
    });
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

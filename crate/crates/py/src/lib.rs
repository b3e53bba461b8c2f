//! Python bindings. The `api` layer is plain Rust so it can be tested without
//! an interpreter; the `#[pyfunction]`s only convert arguments and errors.

use pyo3::prelude::*;

pub mod api {
    use fplab::fpe::{solve_fpe, FpeOptions};
    use fplab::harness::{run_experiment, ExperimentConfig};
    use fplab::lagrangian::{simulate_ensemble, InitialLaw};
    use fplab::smoothing::heat_apply;
    use fplab::superposition::{superpose_check, SuperposeConfig};
    use fplab::{Boundary, Grid, Result};

    pub fn config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
        let c = ExperimentConfig::from_json_with(text, overrides)?;
        c.validate()?;
        Ok(c)
    }

    /// `(passed, [(name, value, threshold, pass)], written paths)`.
    pub type RunSummary = (bool, Vec<(String, f64, f64, bool)>, Vec<String>);

    pub fn run(text: &str, overrides: &[String]) -> Result<RunSummary> {
        let out = run_experiment(&config(text, overrides)?)?;
        let criteria = out.criteria.iter().map(|c| (c.name.clone(), c.value, c.threshold, c.pass)).collect();
        let written = out.written.iter().map(|p| p.display().to_string()).collect();
        Ok((out.pass(), criteria, written))
    }

    /// Node coordinates (flattened, `d` per node), time nodes and one density per time.
    pub type Solution = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

    pub fn solve(text: &str, overrides: &[String]) -> Result<Solution> {
        let c = config(text, overrides)?;
        let (field, grid, tg) = (c.field.build()?, c.build_grid()?, c.build_timegrid()?);
        let nu = solve_fpe(&field, &c.initial_density(&grid), &tg, &grid, &FpeOptions::with_scheme(c.scheme))?;
        let mut x = vec![0.0; grid.dim];
        let mut nodes = Vec::with_capacity(grid.len() * grid.dim);
        for k in 0..grid.len() {
            grid.node(k, &mut x);
            nodes.extend_from_slice(&x);
        }
        let densities = (0..=tg.steps).map(|k| nu.at(k).to_vec()).collect();
        Ok((nodes, tg.nodes(), densities))
    }

    /// Terminal states (one row per path) and path weights.
    pub fn simulate(text: &str, overrides: &[String]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let c = config(text, overrides)?;
        let (field, grid, tg) = (c.field.build()?, c.build_grid()?, c.build_timegrid()?);
        let d = grid.dim;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = c.initial.var;
        }
        let law = InitialLaw::Gaussian { mean: vec![c.initial.mean; d], cov };
        let ens = simulate_ensemble(&field, &law, tg, c.n_paths, c.seed, Some(&grid))?;
        let last = ens.steps;
        let states = (0..ens.n_paths).map(|p| ens.state(p, last).to_vec()).collect();
        Ok((states, ens.weights.clone()))
    }

    /// `[(time, distance, tolerance)]` at each checkpoint.
    pub fn superpose(text: &str, overrides: &[String]) -> Result<Vec<(f64, f64, f64)>> {
        let c = config(text, overrides)?;
        let (field, grid) = (c.field.build()?, c.build_grid()?);
        let sc = SuperposeConfig {
            n_paths: c.n_paths,
            seed: c.seed,
            steps: c.time.steps,
            horizon: c.time.horizon,
            checkpoints: c.checkpoints.clone(),
            tau_scheme: c.tolerances.tau_scheme,
            scheme: c.scheme,
        };
        let rep = superpose_check(&field, &grid, &c.initial_density(&grid), &sc)?;
        Ok(rep.checkpoints.iter().map(|p| (p.time, p.distance, p.tau)).collect())
    }

    pub fn heat_smooth(values: &[f64], half_width: f64, periodic: bool, alpha: f64) -> Result<Vec<f64>> {
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Absorbing };
        let grid = Grid::new(1, half_width, values.len(), boundary)?;
        Ok(heat_apply(&grid, values, alpha)?.values)
    }
}

pyo3::create_exception!(fplab, FplabError, pyo3::exceptions::PyException);

fn err(e: fplab::Error) -> PyErr {
    FplabError::new_err(e.to_string())
}

/// Parse, override and validate a JSON config; returns the normalized JSON.
#[pyfunction]
#[pyo3(signature = (config = "{}", overrides = Vec::new()))]
fn validate_config(config: &str, overrides: Vec<String>) -> PyResult<String> {
    api::config(config, &overrides).map(|c| c.to_json()).map_err(err)
}

/// Run an experiment; returns `(passed, criteria, written_paths)`.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new()))]
fn run_experiment(py: Python<'_>, config: &str, overrides: Vec<String>) -> PyResult<api::RunSummary> {
    py.detach(|| api::run(config, &overrides)).map_err(err)
}

/// Solve the Fokker-Planck equation; returns `(nodes, times, densities)`.
#[pyfunction]
#[pyo3(signature = (config = "{}", overrides = Vec::new()))]
fn solve_fpe(py: Python<'_>, config: &str, overrides: Vec<String>) -> PyResult<api::Solution> {
    py.detach(|| api::solve(config, &overrides)).map_err(err)
}

/// Simulate an ensemble; returns `(terminal_states, weights)`.
#[pyfunction]
#[pyo3(signature = (config = "{}", overrides = Vec::new()))]
fn simulate(py: Python<'_>, config: &str, overrides: Vec<String>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    py.detach(|| api::simulate(config, &overrides)).map_err(err)
}

/// Marginal distances between both descriptions: `[(time, distance, tolerance)]`.
#[pyfunction]
#[pyo3(signature = (config = "{}", overrides = Vec::new()))]
fn superpose(py: Python<'_>, config: &str, overrides: Vec<String>) -> PyResult<Vec<(f64, f64, f64)>> {
    py.detach(|| api::superpose(config, &overrides)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (values, half_width, alpha, periodic = true))]
fn heat_smooth(values: Vec<f64>, half_width: f64, alpha: f64, periodic: bool) -> PyResult<Vec<f64>> {
    api::heat_smooth(&values, half_width, periodic, alpha).map_err(err)
}

#[pymodule(name = "fplab")]
fn fplab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FplabError", m.py().get_type::<FplabError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(solve_fpe, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(superpose, m)?)?;
    m.add_function(wrap_pyfunction!(heat_smooth, m)?)?;
    Ok(())
}

//! Experiment configuration: one JSON document, with dotted `key=value` overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::energy::{EnergyProfile, Regime};
use crate::error::{Error, Result};
use crate::fields::{CoefficientField, SampledCoefficients};
use crate::fpe::{gaussian_density, Scheme};
use crate::grid::{Boundary, Grid, TimeGrid};
use crate::lagrangian::{Gauge, TightnessProfile};

use super::snapshot::{load, Sidecar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Noop,
    SolveFpe,
    Simulate,
    Superpose,
    Commutator,
    Energy,
    Pipeline,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Noop => "noop",
            Self::SolveFpe => "solve-fpe",
            Self::Simulate => "simulate",
            Self::Superpose => "superpose",
            Self::Commutator => "commutator",
            Self::Energy => "energy",
            Self::Pipeline => "pipeline",
        }
    }
}

/// A named built-in or a grid-sampled field stored as a snapshot of shape
/// `[n; d] + [d*d + d]` per time (diffusion entries first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub dim: usize,
    pub params: BTreeMap<String, Value>,
    pub snapshot: Option<PathBuf>,
    /// Ellipticity constant declared for a sampled field.
    pub lambda: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self { name: "ou".into(), dim: 1, params: BTreeMap::new(), snapshot: None, lambda: 0.0 }
    }
}

impl FieldSpec {
    pub fn build(&self) -> Result<CoefficientField> {
        let Some(path) = &self.snapshot else {
            return CoefficientField::builtin(&self.name, self.dim, &self.params);
        };
        let (snap, sidecar) = load(path)?;
        let Sidecar::Coefficients { grid, times } = sidecar else {
            return Err(Error::Config(format!("{} does not hold coefficients", path.display())));
        };
        let d = grid.dim;
        let comps = d * d + d;
        let mut shape = vec![grid.points_per_axis as u64; d];
        shape.push(comps as u64);
        if snap.shape != shape || snap.time_count != times.len() as u64 {
            return Err(Error::Config(format!("{}: shape does not match its sidecar", path.display())));
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for chunk in snap.data.chunks_exact(comps) {
            a.extend_from_slice(&chunk[..d * d]);
            b.extend_from_slice(&chunk[d * d..]);
        }
        let data = SampledCoefficients::new(grid, times, a, b)?;
        Ok(CoefficientField::sampled(self.name.clone(), data, self.lambda))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub half_width: f64,
    pub points: usize,
    pub boundary: Boundary,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { half_width: 8.0, points: 512, boundary: Boundary::Absorbing }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 256 }
    }
}

/// Isotropic Gaussian initial density `N(mean, var I)` sampled on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub mean: f64,
    pub var: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeName {
    Square,
    CappedAbs,
    Cube,
}

impl GaugeName {
    pub fn gauge(self) -> Gauge {
        match self {
            Self::Square => Gauge::square(),
            Self::CappedAbs => Gauge::capped_abs(),
            Self::Cube => Gauge::power(3.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaName {
    Abs,
    Square,
    PowerR,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    pub beta: BetaName,
    pub r: f64,
    pub regime: Regime,
    pub theta: GaugeName,
    pub theta1: GaugeName,
    pub theta2: GaugeName,
    pub m_max: usize,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            beta: BetaName::Square,
            r: 2.0,
            regime: Regime::Degenerate,
            theta: GaugeName::CappedAbs,
            theta1: GaugeName::Square,
            theta2: GaugeName::Square,
            m_max: 5,
        }
    }
}

impl ProfileSpec {
    pub fn energy(&self) -> Result<EnergyProfile> {
        match self.beta {
            BetaName::Abs => Ok(EnergyProfile::abs()),
            BetaName::Square => Ok(EnergyProfile::square()),
            BetaName::PowerR => EnergyProfile::power_r(self.r),
        }
    }

    pub fn tightness(&self) -> Result<TightnessProfile> {
        TightnessProfile::new(self.theta.gauge(), self.theta1.gauge(), self.theta2.gauge(), self.m_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub mass: f64,
    pub z_max: f64,
    pub tau_scheme: f64,
    pub residual: f64,
    pub refinement_ratio: f64,
    /// Required decrease factor of the limit metric per halving of the kernel scale.
    pub ladder_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mass: 1e-8, z_max: 4.0, tau_scheme: 0.005, residual: 1e-3, refinement_ratio: 1.7, ladder_factor: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommutatorChoice {
    Drift,
    Diffusion,
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub field: FieldSpec,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub initial: InitialSpec,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub checkpoints: Vec<f64>,
    pub profile: ProfileSpec,
    /// Dyadic exponents: `alpha = 2^-k` for `k` in `alpha_from..=alpha_to`.
    pub alpha_from: i32,
    pub alpha_to: i32,
    pub commutator: CommutatorChoice,
    /// Resolutions of the uniqueness audit.
    pub resolutions: Vec<usize>,
    /// Kernel scales of the mollification ladder.
    pub scales: Vec<f64>,
    pub tolerances: Tolerances,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Noop,
            field: FieldSpec::default(),
            grid: GridSpec::default(),
            time: TimeSpec::default(),
            initial: InitialSpec::default(),
            n_paths: 100_000,
            seed: 0,
            scheme: Scheme::Explicit,
            checkpoints: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            profile: ProfileSpec::default(),
            alpha_from: 2,
            alpha_to: 10,
            commutator: CommutatorChoice::Drift,
            resolutions: vec![128, 256, 512],
            scales: vec![0.4, 0.2, 0.1],
            tolerances: Tolerances::default(),
            output: PathBuf::from("out"),
        }
    }
}

fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    Error::Config(format!("line {} column {}, at '{path}': {inner}", inner.line(), inner.column()))
}

/// Set `key` (dotted path) in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key '{key}' has an empty component")));
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, &[])
    }

    /// Parse with overrides applied before deserialization. Errors carry the line
    /// and column for syntax errors and the field path for type errors.
    pub fn from_json_with(text: &str, overrides: &[String]) -> Result<Self> {
        let config = if overrides.is_empty() {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(parse_error)?
        } else {
            let mut doc: Value = {
                let de = &mut serde_json::Deserializer::from_str(text);
                serde_path_to_error::deserialize(de).map_err(parse_error)?
            };
            for o in overrides {
                apply_override(&mut doc, o)?;
            }
            serde_path_to_error::deserialize(doc).map_err(|e| {
                let path = e.path().to_string();
                Error::Config(format!("at '{path}': {}", e.into_inner()))
            })?
        };
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.field.dim, self.grid.half_width, self.grid.points, self.grid.boundary)
    }

    pub fn build_timegrid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.horizon, self.time.steps)
    }

    pub fn initial_density(&self, grid: &Grid) -> Vec<f64> {
        let (m, v) = (self.initial.mean, self.initial.var);
        grid.sample(|x| gaussian_density(x, m, v))
    }

    /// Check that every referenced object can be built.
    pub fn validate(&self) -> Result<()> {
        let field = self.field.build()?;
        if field.dim() != self.field.dim {
            return Err(Error::Config(format!("field has dimension {}, config says {}", field.dim(), self.field.dim)));
        }
        self.build_grid()?;
        self.build_timegrid()?;
        if !(self.initial.var > 0.0) {
            return Err(Error::Config("initial.var must be positive".into()));
        }
        self.profile.energy()?;
        if matches!(self.kind, ExperimentKind::Simulate) {
            self.profile.tightness()?;
        }
        if matches!(self.kind, ExperimentKind::Simulate | ExperimentKind::Superpose) && self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        if self.alpha_from > self.alpha_to {
            return Err(Error::Config("alpha_from must not exceed alpha_to".into()));
        }
        Ok(())
    }
}

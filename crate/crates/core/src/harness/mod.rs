//! Configuration, binary snapshots, reports and the experiment runner.

mod config;
mod run;
pub mod snapshot;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use config::{
    apply_override, BetaName, CommutatorChoice, ExperimentConfig, ExperimentKind, FieldSpec, GaugeName, GridSpec, InitialSpec,
    ProfileSpec, TimeSpec, Tolerances,
};
pub use run::{run_experiment, Artifact, RunOutcome};
pub use snapshot::{load_curve, load_ensemble, save_curve, save_ensemble, Sidecar, Snapshot};

/// Environment variable capping the worker count of the CLI.
pub const THREADS_ENV: &str = "FPLAB_THREADS";

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let result = (|| {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// One asserted criterion of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Criterion {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value >= threshold }
    }
}

/// JSONL report: a header line embedding the config, then one line per
/// criterion, then any extra records.
pub fn jsonl_report(config: &ExperimentConfig, criteria: &[Criterion], records: &[serde_json::Value]) -> String {
    let mut out = String::new();
    let header = serde_json::json!({ "record": "config", "kind": config.kind.name(), "config": config });
    out.push_str(&header.to_string());
    out.push('\n');
    for c in criteria {
        let line = serde_json::json!({ "record": "criterion", "name": c.name, "value": c.value, "threshold": c.threshold, "pass": c.pass });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

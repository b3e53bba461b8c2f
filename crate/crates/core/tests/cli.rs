use std::path::Path;
use std::process::Command;

use fplab::harness::snapshot::{load_curve, Sidecar, Snapshot};
use fplab::harness::ExperimentConfig;

fn fplab(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fplab")).args(args).env("FPLAB_THREADS", threads).output().expect("binary runs")
}

fn small(out: &str) -> Vec<&str> {
    vec!["--out", out, "--override", "grid.points=96", "--override", "time.steps=24", "--override", "n_paths=2000"]
}

#[test]
fn solve_writes_readable_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let mut args = vec!["solve-fpe"];
    args.extend(small(out.to_str().unwrap()));
    let run = fplab(&args, "1");
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let curve = load_curve(&out.join("curve.fplb")).unwrap();
    assert_eq!(curve.grid.len(), 96);
    assert_eq!(curve.timegrid.steps, 24);
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(out.join("curve.fplb.json")).unwrap()).unwrap();
    assert!(matches!(sidecar, Sidecar::DensityCurve { .. }));
    let report = std::fs::read_to_string(out.join("steps.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(report.lines().next().unwrap()).unwrap();
    assert_eq!(header["record"], "config");
    let embedded: ExperimentConfig = serde_json::from_value(header["config"].clone()).unwrap();
    assert_eq!(embedded.grid.points, 96);
}

#[test]
fn simulate_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let read_all = |p: &Path| {
        let mut files: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
    };
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("sim{threads}"));
        let mut args = vec!["simulate", "--seed", "9"];
        args.extend(small(out.to_str().unwrap()));
        let run = fplab(&args, threads);
        assert!(matches!(run.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&run.stderr));
        outputs.push(read_all(&out));
    }
    assert!(!outputs[0].is_empty());
    // the report embeds the output directory, so compare the binary artifacts only
    let snapshots = |o: &Vec<Vec<u8>>| o.iter().filter(|b| b.starts_with(b"FPLB")).cloned().collect::<Vec<_>>();
    assert_eq!(snapshots(&outputs[0]), snapshots(&outputs[1]));
    assert!(Snapshot::from_bytes(&snapshots(&outputs[0])[0]).is_ok());
}

#[test]
fn validate_reports_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"kind": "solve-fpe", "grid": {"points": 64}}"#).unwrap();
    let run = fplab(&["validate", "--config", good.to_str().unwrap()], "1");
    assert_eq!(run.status.code(), Some(0));

    let typo = dir.path().join("typo.json");
    std::fs::write(&typo, "{\n  \"grid\": {\"pionts\": 64}\n}").unwrap();
    let run = fplab(&["validate", "--config", typo.to_str().unwrap()], "1");
    assert_eq!(run.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&run.stderr);
    assert!(msg.contains("pionts") && msg.contains("line 2"), "{msg}");

    let run = fplab(&["validate", "--override", "grid.points=1"], "1");
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn failed_run_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let run = fplab(&["solve-fpe", "--out", out.to_str().unwrap(), "--override", "field.name=nonexistent"], "1");
    assert_eq!(run.status.code(), Some(2));
    assert!(!out.join("curve.fplb").exists());
}

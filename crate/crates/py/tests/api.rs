use fplab_py::api;

fn small() -> Vec<String> {
    ["grid.points=64", "time.steps=16", "n_paths=4000"].iter().map(|s| s.to_string()).collect()
}

#[test]
fn solve_returns_normalized_densities() {
    let (nodes, times, dens) = api::solve("{}", &small()).unwrap();
    assert_eq!(nodes.len(), 64);
    assert_eq!(times.len(), 17);
    let h = nodes[1] - nodes[0];
    for u in &dens {
        let mass: f64 = u.iter().sum::<f64>() * h;
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}

#[test]
fn simulate_is_seeded() {
    let a = api::simulate(r#"{"seed": 5}"#, &small()).unwrap();
    let b = api::simulate(r#"{"seed": 5}"#, &small()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.len(), 4000);
    assert!((a.1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn superpose_reports_every_checkpoint() {
    let rows = api::superpose("{}", &small()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|(_, d, tau)| d.is_finite() && *tau > 0.0));
}

#[test]
fn heat_smooth_keeps_constants() {
    let out = api::heat_smooth(&[2.0; 32], 3.0, true, 0.3).unwrap();
    assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
}

#[test]
fn bad_configs_are_errors() {
    assert!(api::config(r#"{"grid": {"points": 1}}"#, &[]).is_err());
    assert!(api::config("{", &[]).is_err());
    assert!(api::run(r#"{"kind": "noop"}"#, &["field.name=nope".into()]).is_err());
}

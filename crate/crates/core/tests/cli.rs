use std::path::Path;
use std::process::Command;

fn run(args: &[&str], config: &str, dir: &Path) -> (i32, String) {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_planelike"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

#[test]
fn planelike_run_writes_a_passing_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(&["planelike"], r#"{"schema_version": 1, "kernel": {"s": 0.75}, "geometry": {"M": 16}}"#, dir.path());
    assert_eq!(code, 0, "{err}");
    let rep = report(dir.path());
    assert!(rep["cases"][0]["M0_emp"].as_f64().unwrap().is_finite());
    assert_eq!(rep["cases"][0]["tauPLcond"]["tag"], "tauPLcond");
    assert!(dir.path().join("out/field_p0_1_tau1.csv").exists());
    assert!(dir.path().join("out/trace_p0_1_tau1.csv").exists());
}

#[test]
fn rejections_exit_with_code_two_and_a_tag() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(&["planelike"], r#"{"schema_version": 1, "kernel": {"xi": 2.0}}"#, dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("xi=tau"), "{err}");
    let (code, err) = run(&["gamma"], r#"{"schema_version": 1, "kernel": {"s": 0.6}}"#, dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("s<1/2"), "{err}");
    let (code, err) = run(&["perimeter"], r#"{"schema_version": 1, "kernel": {"s": 0.6}}"#, dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("s<1/2"), "{err}");
    let (code, _) = run(&["planelike"], r#"{"schema_version": 1, "surprise": true}"#, dir.path());
    assert_eq!(code, 2);
    let (code, err) = run(&["scaling"], r#"{"schema_version": 1, "sweep": {"radii": [2, 3, 4]}}"#, dir.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn barrier_below_threshold_names_the_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema_version": 1, "kernel": {"dim": 1, "s": 0.75}, "geometry": {"direction": [1]},
                 "barrier": {"delta": 1e-6, "R": 10, "slide": false}}"#;
    let (code, err) = run(&["barrier"], cfg, dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("R >= C(delta)"), "{err}");
}

#[test]
fn one_dimensional_barrier_pipeline_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"schema_version": 1, "kernel": {"dim": 1, "s": 0.75}, "geometry": {"direction": [1], "M": 40, "buffer": 4},
                 "barrier": {"delta": 30}}"#;
    let (code, err) = run(&["barrier"], cfg, dir.path());
    assert_eq!(code, 0, "{err}");
    let rep = report(dir.path());
    assert_eq!(rep["verification"]["tag"], "LKwbar");
    assert!(rep["slide"]["report"]["defect"].as_f64().unwrap() >= -1e-8 * rep["slide"]["report"]["e_u"].as_f64().unwrap().abs());
    assert!(dir.path().join("out/barrier_profile.csv").exists());
}

#[test]
fn gamma_outputs_are_reproducible() {
    let cfg = r#"{"schema_version": 1, "kernel": {"s": 0.25}, "sweep": {"eps_list": [1, 0.5, 0.25]}, "seed": 7}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, ea) = run(&["gamma"], cfg, a.path());
    let (cb, _) = run(&["gamma"], cfg, b.path());
    assert_eq!(ca, 0, "{ea}");
    assert_eq!(cb, 0);
    for name in ["gamma.csv", "mask_limit.csv", "field_eps2.csv", "report.json"] {
        let x = std::fs::read(a.path().join("out").join(name)).unwrap();
        let y = std::fs::read(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let head = std::fs::read_to_string(a.path().join("out/gamma.csv")).unwrap();
    assert!(head.starts_with("eps,E_eps,G_threshold,sym_diff,converged"));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"schema_version": 1, "kernel": {"s": 0.75}, "geometry": {"M": 16}, "seed": 1}"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_planelike"))
        .args(["validate", "--seed", "99", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(report(dir.path())["seed"], 99);
}

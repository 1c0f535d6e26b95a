use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn toadwave(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toadwave"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn spectral_writes_dispersion_and_min_speed() {
    let dir = tempfile::tempdir().unwrap();
    let o = toadwave(dir.path(), &["spectral", "--out", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ms = read_json(&dir.path().join("s/minspeed.json"));
    assert_eq!(ms["schema"], "toadwave-output/1");
    let c = ms["c_star"].as_f64().unwrap();
    assert!((c - 2.4539873448675).abs() < 1e-6, "{c}");
    assert!(ms["residuals"]["R2"].as_f64().unwrap() > 0.0);
    assert!(ms["residuals"]["R6"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(dir.path().join("s/dispersion.csv")).unwrap();
    assert!(csv.starts_with("lambda,gamma,c\n"));
    for line in csv.lines().skip(1) {
        let c_l: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(c_l >= c - 1e-12);
    }
}

#[test]
fn tau_zero_gives_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = toadwave(dir.path(), &["spectral", "--tau", "0", "--out", "s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ms = read_json(&dir.path().join("s/minspeed.json"));
    assert!((ms["c_star"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((ms["lambda_star"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(ms["config"]["spectral"]["tau"], 0.0);
}

#[test]
fn bad_configuration_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"params": {"theta_min": 0.0}}"#);
    let o = toadwave(dir.path(), &["spectral", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("params.theta_min"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), r#"{"params": {"thetamin": 1.0}}"#);
    assert_eq!(
        toadwave(dir.path(), &["spectral", "--config", &cfg])
            .status
            .code(),
        Some(1)
    );

    let cfg = write_config(dir.path(), r#"{"slab": {"epsilon": 0.1}}"#);
    assert_eq!(
        toadwave(dir.path(), &["slab", "--config", &cfg])
            .status
            .code(),
        Some(1)
    );

    assert_eq!(
        toadwave(dir.path(), &["spectral", "--only", "slab"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        toadwave(dir.path(), &["verify", "--only", "nope"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = toadwave(dir.path(), &["spectral", "--config", "absent.json"]);
    assert_eq!(o.status.code(), Some(6));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_toadwave"))
        .current_dir(dir.path())
        .env("TOADWAVE_THREADS", "zero")
        .arg("spectral")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trait_independent_slab_matches_the_scalar_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"slab": {"a_list": [8.0, 16.0], "n_xi_per_unit": 5.0, "n_theta": 11}}"#,
    );
    let o = toadwave(
        dir.path(),
        &["slab", "--tau", "0", "--config", &cfg, "--out", "s"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let conv = read_json(&dir.path().join("s/convergence.json"));
    assert_eq!(conv["gaps_decreasing"], true);
    assert_eq!(conv["below_ceiling"], true);
    for a in ["8", "16"] {
        let h = read_json(&dir.path().join(format!("s/slab_a{a}.json")));
        assert!((h["nu_at_center"].as_f64().unwrap() - 0.01).abs() < 1e-8);
        assert!((h["harnack_ratio"].as_f64().unwrap() - 1.0).abs() < 1e-8);
        assert!(h["min_mu"].as_f64().unwrap() >= 0.0);
        let mu = std::fs::read_to_string(dir.path().join(format!("s/slab_a{a}_mu.csv"))).unwrap();
        assert!(mu.starts_with("xi,theta,mu\n"));
    }
}

#[test]
fn small_window_is_a_guard_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"evolution": {"x_max": 50.0, "n_x": 501}}"#);
    let o = toadwave(dir.path(), &["evolve", "--config", &cfg, "--out", "e"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("window"), "{}", stderr(&o));
    assert!(!dir.path().join("e").exists());
}

#[test]
fn evolution_without_reaction_does_not_grow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"params": {"r": 0.0},
            "evolution": {"x_max": 40.0, "n_x": 401, "n_theta": 11, "t_end": 2.0,
                          "initial_mass_width": 20.0, "thresholds": [0.1]}}"#,
    );
    let o = toadwave(dir.path(), &["evolve", "--config", &cfg, "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&dir.path().join("e/summary.json"));
    assert!(s["c_star"].is_null());
    assert!(s["edge"].is_null());
    // without reaction mass only leaves through the Dirichlet end at x_min
    let (m0, m1) = (
        s["initial_mass"].as_f64().unwrap(),
        s["final_mass"].as_f64().unwrap(),
    );
    assert!(m1 < m0 && m1 > 0.5 * m0, "{m0} -> {m1}");
    let field = std::fs::read_to_string(dir.path().join("e/final_field.csv")).unwrap();
    assert!(field.starts_with("x,theta,n\n"));
    assert_eq!(field.lines().count(), 1 + 401 * 11);
}

#[test]
fn injected_failure_exits_four_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"verify": {"inject_failures": ["rel1"]}}"#);
    let o = toadwave(
        dir.path(),
        &[
            "verify", "--only", "spectral", "--config", &cfg, "--out", "v",
        ],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("rel1"));
    let r = read_json(&dir.path().join("v/verify_report.json"));
    assert_eq!(r["passed"], false);
    assert_eq!(r["failed"], serde_json::json!(["rel1"]));
}

#[test]
fn single_suite_runs_alone_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let o = toadwave(dir.path(), &["verify", "--only", "appendixB", "--out", "v"]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.path().join("v/verify_report.json")).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let r: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(r["suites"], serde_json::json!(["appendixB"]));
    assert!(r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["suite"] == "appendixB"));
}

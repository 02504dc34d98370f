use std::path::Path;

use bhl::cli::run_cli;

fn out_dir(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["bhl"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

#[test]
fn cell_command_writes_the_effective_coefficient_and_a_manifest() {
    let dir = out_dir("cli_cell");
    assert_eq!(run(&["cell", "--builtin", "model1d", "--out", dir.to_str().unwrap()]), 0);
    let cell: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("cell.json")).unwrap()).unwrap();
    let g0 = cell["cell"]["g_eff"][0][0][0].as_f64().unwrap();
    assert!((g0 - 3f64.sqrt()).abs() < 1e-10);
    assert!(cell["voigt_reuss"]["upper_margin"].as_f64().unwrap() >= 0.0);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "cell");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_file_round_trip_through_the_cli() {
    let dir = out_dir("cli_config");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = bhl::config::ScenarioConfig::from_scenario(&bhl::scenarios::builtin("model1d").unwrap());
    let path = dir.join("model1d.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    assert_eq!(run(&["cell", "--scenario", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]), 0);
}

#[test]
fn malformed_config_exits_with_validation_status() {
    let dir = out_dir("cli_bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"name": "x", "lattice": [[1.0]], "symbol": [{"re": [[1.0]]}], "g": [{"multi_index": [0], "re": 3}]}"#)
        .unwrap();
    assert_eq!(run(&["cell", "--scenario", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]), 2);
    assert_eq!(run(&["cell", "--builtin", "nope"]), 2);
    assert_eq!(run(&["error-study", "--builtin", "model1d", "--variant", "J7"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn error_study_csv_is_deterministic() {
    let args = |dir: &str| {
        vec![
            "error-study".to_string(),
            "--builtin".into(),
            "model1d".into(),
            "--variant".into(),
            "J1".into(),
            "--s".into(),
            "1".into(),
            "--eps".into(),
            "0.125,0.0625,0.03125,0.015625".into(),
            "--kgrid".into(),
            "33".into(),
            "--out".into(),
            dir.to_string(),
        ]
    };
    let a = out_dir("cli_det_a");
    let b = out_dir("cli_det_b");
    for d in [&a, &b] {
        let mut argv = vec!["bhl".to_string()];
        argv.extend(args(d.to_str().unwrap()));
        assert_eq!(run_cli(argv), 0);
    }
    let csv_a = std::fs::read(a.join("model1d_J1.csv")).unwrap();
    let csv_b = std::fs::read(b.join("model1d_J1.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("scenario,variant,eps,tau,s,error,kmax_at,slope,r2\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(a.join("model1d_J1_tau1_s1.dat").exists());
}

#[test]
fn regimes_and_germ_commands_succeed() {
    let dir = out_dir("cli_regimes");
    assert_eq!(run(&["regimes", "--builtin", "acoustics2d_hermitian", "--out", dir.to_str().unwrap()]), 0);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("regimes.json")).unwrap()).unwrap();
    assert_eq!(rep["report"]["regime"], "general");

    let dir = out_dir("cli_germ");
    assert_eq!(run(&["germ", "--builtin", "acoustics2d_real", "--thetas", "64", "--out", dir.to_str().unwrap()]), 0);
    let germ: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("germ.json")).unwrap()).unwrap();
    let rows = germ["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 64);
    for r in rows {
        for mu in r["mu"].as_array().unwrap() {
            assert!(mu.as_f64().unwrap().abs() < 1e-8);
        }
    }
}

#[test]
fn bands_and_builtin_listing() {
    let dir = out_dir("cli_bands");
    assert_eq!(run(&["bands", "--builtin", "hill2d", "--points", "8", "--out", dir.to_str().unwrap()]), 0);
    let first = std::fs::read_to_string(dir.join("bands_0.dat")).unwrap();
    assert_eq!(first.lines().count(), 9);
    assert_eq!(run(&["builtin"]), 0);
    assert_eq!(run(&["builtin", "hill2d"]), 0);
}

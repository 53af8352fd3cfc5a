use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nsalpha_core::harness::ErrorTable;

const SMALL: &str = r#"
grid = 16
t_final = 0.02
dt = 0.01
snapshot_times = [0.0, 0.01, 0.02]
lattice_sides = [2, 3]
noise = [{ type = "single_mode", eps = [0.0, 0.0, 0.3], kappa = [1, 1, 0], phase = "sin" }]

[flowmap]
labels_per_axis = 3
replicas = 4
t_final = 0.02
"#;

fn nsalpha(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsalpha"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_passes_on_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = nsalpha(&["validate", &cfg]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn validate_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let beta = write_config(dir.path(), "beta.toml", "beta = 0.4");
    let o = nsalpha(&["validate", &beta]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("slack"), "{}", stderr(&o));

    let parallel = write_config(
        dir.path(),
        "parallel.toml",
        r#"noise = [{ type = "single_mode", eps = [0.2, 0.0, 0.0], kappa = [1, 0, 0], phase = "cos" }]"#,
    );
    let o = nsalpha(&["validate", &parallel]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("not divergence-free"), "{}", stderr(&o));

    let typo = write_config(dir.path(), "typo.toml", "gird = 32\nbeta = 0.0");
    let o = nsalpha(&["validate", &typo]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("unknown key `gird`") && err.contains("beta must be in"), "{err}");
}

#[test]
fn validate_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = nsalpha(&["--format", "json", "validate", &cfg]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["checks"].as_array().unwrap().len(), 7);
}

#[test]
fn converge_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = nsalpha(&["converge", &cfg, "--out", out.to_str().unwrap(), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("errors.csv")).unwrap();
    let lines: Vec<_> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "N,beta,norm,sup_error,t_of_sup,wall_ms,seed_master,config_hash");
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8 && l.split(',').nth(6) == Some("7")));
    assert!(csv.starts_with("# errors are measured in H^-1_2"));
    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("master = 7"));
}

#[test]
fn converge_is_bit_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let mut tables = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = nsalpha(&[
            "--threads",
            threads,
            "--format",
            "json",
            "converge",
            &cfg,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let table = ErrorTable::read_json(fs::File::open(out.join("errors.json")).unwrap()).unwrap();
        tables.push(table);
    }
    assert!(tables[0].same_results(&tables[1]));
}

#[test]
fn simulate_and_flowmap_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("sim");
    let o = nsalpha(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["solver.nsa", "solver.json", "particles_N8.nsa", "particles_N27.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let side: serde_json::Value = serde_json::from_reader(fs::File::open(out.join("particles_N27.json")).unwrap()).unwrap();
    assert_eq!(side["N"], 27);
    assert_eq!(side["beta"], 0.25);

    let out = dir.path().join("flow");
    let o = nsalpha(&["flowmap", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("flowmap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 27 * 3);
    assert!(stdout(&o).contains("max z at t = 0:"));
}

#[test]
fn missing_config_is_an_error() {
    let o = nsalpha(&["validate", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("loading /nonexistent/config.toml"));
}

#[test]
fn shipped_default_config_loads() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let cfg = nsalpha_core::ExperimentConfig::load(path).unwrap();
    assert_eq!(cfg, nsalpha_core::ExperimentConfig::default());
}

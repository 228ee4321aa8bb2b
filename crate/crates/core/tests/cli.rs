use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use porous_reflect::output::read_checkpoint;

const BASE: &str = "[basis]
n_modes = 16
n_grid = 16
spectrum = lattice
[psi]
r = 3
alpha1 = 1
[phi]
penalty = 1e3
[noise]
master_seed = 3
amplitudes = power
scale = 0.3
power = 1
[solver]
dt = 1e-3
t_end = 0.05
scheme = implicit-nodal
record_every = 10
x0 = mode:1:0.2
clip_initial = true
";

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.cfg");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_porous-reflect"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

#[test]
fn empty_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "", &["check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_key_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &BASE.replace("alpha1 = 1", "alpha1 = 1\nalpha9 = 2"), &["check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 8"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_passes_for_admissible_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), BASE, &["check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("out/check.json").exists());
}

#[test]
fn slowly_decaying_noise_fails_the_summability_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &BASE.replace("power = 1\n", "power = 0.4\n"), &["check"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("noise_sum") && l.contains("FAILS")), "{text}");
}

#[test]
fn contraction_with_equal_starts_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BASE.replace("clip_initial = true", "clip_initial = true\ny0 = mode:1:0.2");
    let out = run(dir.path(), &cfg, &["verify", "l1_contraction", "--paths", "2"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), BASE, &["verify", "nonsense"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_stamped_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), BASE, &["simulate", "--paths", "2", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ts = fs::read_to_string(dir.path().join("out/timeseries.csv")).unwrap();
    assert!(ts.contains("# master_seed = 11"));
    // 2 paths x 6 samples plus the column header
    assert_eq!(porous_reflect::output::csv_body(&ts).lines().count(), 13);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["paths"].as_array().unwrap().len(), 2);
    let bytes = fs::read(dir.path().join("out/checkpoint.bin")).unwrap();
    let ck = read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(ck.master_seed, 11);
    assert_eq!(ck.snapshots.len(), 6);
}

#[test]
fn blow_up_keeps_partial_output_and_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[basis]
n_modes = 32
n_grid = 65
[psi]
r = 3
alpha1 = 1
[phi]
penalty = 1e3
[noise]
master_seed = 7
amplitudes = power
scale = 1
power = 1
[solver]
dt = 1e-4
t_end = 0.5
record_every = 50
x0 = bump:0.5:0.25:0.5
";
    let out = run(dir.path(), cfg, &["simulate"]);
    assert_eq!(out.status.code(), Some(3));
    let summary = fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    assert!(summary.contains("blew up"));
    assert!(fs::read_to_string(dir.path().join("out/timeseries.csv")).unwrap().lines().count() > 3);
}

#[test]
fn verify_writes_report_and_path_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BASE.replace("penalty = 1e3", "penalty = 0");
    let out = run(dir.path(), &cfg, &["verify", "comparison", "--paths", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/comparison_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_paths"], 3);
    assert!(report["config_sha256"].as_str().unwrap().len() == 64);
    assert!(dir.path().join("out/comparison_paths.csv").exists());
}

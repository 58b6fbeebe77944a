//! End-to-end runs of the `pmn` binary and its exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmn")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn beampattern_run_writes_verified_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bp");
    let o = pmn(&["beampattern", "--config", &config("beampattern_tx.toml"), "--out", path(&out), "--jobs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["scnr_summary.csv", "beampattern_tx.csv", "beampattern_rx.csv", "convergence.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let v = pmn(&["verify", "--out", path(&out)]);
    assert_eq!(code(&v), 0);

    std::fs::write(out.join("convergence.csv"), "# manifest_sha256=bad\n").unwrap();
    assert_eq!(code(&pmn(&["verify", "--out", path(&out)])), 1);
}

#[test]
fn run_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = dir.path().join(name);
        let o = pmn(&["run", "--config", &config("desk.toml"), "--seed", seed, "--out", path(&out), "--jobs", "1"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        bodies.push(std::fs::read(out.join("trials.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_ne!(bodies[0], bodies[2]);
}

#[test]
fn sweep_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let o = pmn(&[
        "sweep",
        "--config",
        &config("sweep_gamma.toml"),
        "--param",
        "gamma-db",
        "--values",
        "0,10",
        "--trials",
        "3",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 2 * 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let bad_method = pmn(&["run", "--config", &config("desk.toml"), "--method", "mimo", "--out", path(&out)]);
    assert_eq!(code(&bad_method), 2);
    let missing = pmn(&["mc", "--config", path(&dir.path().join("nope.toml")), "--out", path(&out)]);
    assert_eq!(code(&missing), 2);

    let no_gamma = dir.path().join("no_gamma.toml");
    std::fs::write(&no_gamma, "[system]\nn_tx = 8\nn_rx = 4\nn_rf = 2\nn_users = 2\n[experiment]\nmethod = \"bsyn\"\n")
        .unwrap();
    assert_eq!(code(&pmn(&["run", "--config", path(&no_gamma), "--out", path(&out)])), 2);

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "[system]\nn_tx = 8\nn_rx = 4\nn_rf = 2\nn_users = 2\nantennas = 3\n").unwrap();
    assert_eq!(code(&pmn(&["run", "--config", path(&unknown), "--out", path(&out)])), 2);
}

#[test]
fn all_failed_trials_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("infeasible.toml");
    std::fs::write(
        &cfg,
        "[system]\nn_tx = 8\nn_rx = 4\nn_rf = 2\nn_users = 2\n[experiment]\nmethod = \"bsyn\"\ngamma_db = 200.0\ntrials = 3\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = pmn(&["mc", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&o), 3);
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().filter(|l| l.contains("infeasible")).count(), 3);
}

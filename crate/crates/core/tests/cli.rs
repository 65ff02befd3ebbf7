use std::path::Path;
use std::process::{Command, Output};

use xorcast::metrics::REPORT_COLUMNS;

fn xorcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xorcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn xorcast")
}

fn short_config(dir: &Path) {
    std::fs::write(dir.join("short.toml"), "[run]\nduration_ms = 2000\n").unwrap();
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_results_csv() {
    let dir = tempfile::tempdir().unwrap();
    short_config(dir.path());
    let out = xorcast(dir.path(), &["run", "--config", "short.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), REPORT_COLUMNS.join(","));
    // One row per flow and an `all` row.
    let flows: Vec<&str> = lines.map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(flows, ["0", "1", "2", "all"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("psnr proxy"));
}

#[test]
fn default_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = xorcast(dir.path(), &["run", "--algorithm", "noNC", "--out", "r.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("r.csv").exists());
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = xorcast(dir.path(), &["run", "--config", "nowhere.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nowhere.toml"), "{}", stderr(&out));
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn invalid_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[channel]\nloss_rate = 3\n").unwrap();
    let out = xorcast(dir.path(), &["run", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bad.toml"), "{}", stderr(&out));
}

#[test]
fn same_seed_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    short_config(dir.path());
    for name in ["a.csv", "b.csv"] {
        let out = xorcast(
            dir.path(),
            &["run", "--config", "short.toml", "--seed", "7", "--out", name],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gen_trace_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = xorcast(
        dir.path(),
        &["gen-trace", "--duration", "1000", "--flows", "2", "--out", "t.csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 35);

    std::fs::write(
        dir.path().join("replay.toml"),
        "[run]\nduration_ms = 1000\nnum_clients = 2\n[traffic]\ntrace = \"t.csv\"\n",
    )
    .unwrap();
    let out = xorcast(dir.path(), &["run", "--config", "replay.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn gen_trace_rejects_zero_duration() {
    let dir = tempfile::tempdir().unwrap();
    let out = xorcast(dir.path(), &["gen-trace", "--duration", "0", "--out", "t.csv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("duration"), "{}", stderr(&out));
    assert!(!dir.path().join("t.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    short_config(dir.path());
    let out = xorcast(
        dir.path(),
        &[
            "sweep",
            "--config",
            "short.toml",
            "--axis",
            "loss",
            "--values",
            "0.05,0.15",
            "--seeds",
            "2",
            "--out",
            "s.csv",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let runs = csv.lines().filter(|l| l.split(',').nth(5) == Some("all")).count();
    // 2 loss values x 4 algorithms x 2 seeds
    assert_eq!(runs, 16);
    assert_eq!(csv.lines().count(), 1 + 16 * 4);
    let summary = std::fs::read_to_string(dir.path().join("s_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 8);
}

#[test]
fn sweep_without_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = xorcast(dir.path(), &["sweep"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_algorithm_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = xorcast(dir.path(), &["run", "--algorithm", "fastest"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("results.csv").exists());
}

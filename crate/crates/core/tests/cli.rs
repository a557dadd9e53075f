use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn taskbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskbench"))
        .current_dir(dir)
        .env_remove("TASKBENCH_THREADS")
        .args(args)
        .output()
        .expect("failed to start taskbench")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn summary(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--grid-exp", "1", "--patch-size", "6", "--steps", "3", "--threads", "2"];

#[test]
fn run_writes_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--threading-model", "backfill", "--layout", "layout.csv", "--step-csv", "steps.csv"];
    args.extend_from_slice(SMALL);
    let stdout = ok(&taskbench(dir.path(), &args));
    assert!(stdout.contains("checksum"), "{stdout}");

    let s = summary(&dir.path().join("summary.json"));
    assert!(s["time_per_step_per_patch"].as_f64().unwrap() > 0.0);
    assert_eq!(s["config"]["strategy"], "backfill");
    assert_eq!(s["patches"], 9);
    assert_eq!(s["steps"], 3);
    assert_eq!(s["checksum"].as_str().unwrap().len(), 64);

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t_ns,worker,kind,id,aux"));
    assert!(trace.contains("task_start"));
    let layout = std::fs::read_to_string(dir.path().join("layout.csv")).unwrap();
    assert_eq!(layout.lines().count(), 10);
    let steps = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 4);
}

#[test]
fn summary_is_a_reusable_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--threading-model", "merge-and-backfill", "--balance", "ill", "--no-trace"];
    args.extend_from_slice(SMALL);
    ok(&taskbench(dir.path(), &args));
    assert!(!dir.path().join("trace.csv").exists());
    let first = summary(&dir.path().join("summary.json"));

    ok(&taskbench(dir.path(), &["run", "--config", "summary.json", "--summary", "again.json"]));
    let again = summary(&dir.path().join("again.json"));
    assert_eq!(first["checksum"], again["checksum"]);
    assert_eq!(again["config"]["balance"], "ill");
    assert_eq!(again["config"]["strategy"], "merge-and-backfill");

    ok(&taskbench(dir.path(), &["run", "--config", "summary.json", "--summary", "third.json", "--threads", "1"]));
    assert_eq!(first["checksum"], summary(&dir.path().join("third.json"))["checksum"]);
}

#[test]
fn strict_group_reports_starvation() {
    let dir = tempfile::tempdir().unwrap();
    let out = taskbench(
        dir.path(),
        &[
            "run", "--yield-mode", "strict-group", "--threads", "2", "--partitions", "4", "--grid-exp", "2",
            "--patch-size", "4", "--steps", "2", "--no-trace", "--watchdog-polls", "50000",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("starvation"), "{stderr}");
}

#[test]
fn invalid_input_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = taskbench(dir.path(), &["run", "--threading-model", "holdback"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("merge-and-backfill"));
    let out = taskbench(dir.path(), &["run", "--steps", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = taskbench(dir.path(), &["run", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threads_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_taskbench"))
        .current_dir(dir.path())
        .env("TASKBENCH_THREADS", "3")
        .args(["run", "--grid-exp", "1", "--patch-size", "2", "--steps", "1", "--no-trace"])
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(summary(&dir.path().join("summary.json"))["config"]["threads"], 3);
}

#[test]
fn sweep_appends_and_skips_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep", "--thread-counts", "1,2", "--variants", "bsp-native,enclave-hold-back", "--balances", "well,ill",
        "--grid-exp", "1", "--patch-size", "4", "--steps", "2",
    ];
    let stdout = ok(&taskbench(dir.path(), &args));
    assert!(stdout.contains("8 run, 0 skipped, 0 failed; all checksums agree"), "{stdout}");
    let results = dir.path().join("results.csv");
    let first = std::fs::read_to_string(&results).unwrap();
    assert_eq!(first.lines().count(), 9);
    assert!(first.lines().next().unwrap().contains("time_per_step_per_patch"));

    let stdout = ok(&taskbench(dir.path(), &args));
    assert!(stdout.contains("0 run, 8 skipped"), "{stdout}");
    assert_eq!(std::fs::read_to_string(&results).unwrap(), first);

    let mut wider = args.to_vec();
    wider[2] = "1,2,3";
    let stdout = ok(&taskbench(dir.path(), &wider));
    assert!(stdout.contains("4 run, 8 skipped"), "{stdout}");
    let rows = std::fs::read_to_string(&results).unwrap();
    assert_eq!(rows.lines().count(), 13);
    assert_eq!(rows.lines().filter(|l| l.contains("t_ns") || l.starts_with("solver")).count(), 1);
}

#[test]
fn verify_catches_an_injected_stale_halo() {
    let dir = tempfile::tempdir().unwrap();
    let out = taskbench(dir.path(), &["verify", "--inject-stale-halo", "--threads", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().find(|l| l.contains("kernel oracle")).unwrap();
    assert!(line.starts_with("FAIL") && line.contains("stale halo"), "{line}");
}

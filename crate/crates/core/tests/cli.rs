mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{golden_path, repo_root};

fn avicast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avicast"))
        .args(args)
        .env_remove("AVICAST_SCENARIO_DIR")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn scenario_arg(name: &str) -> String {
    repo_root()
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

fn run_into(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let metrics = dir.join("m.csv");
    let trace = dir.join("t.trace");
    let mut args = vec![
        "run",
        "--config",
        config,
        "--seed",
        "1",
        "--out-metrics",
        metrics.to_str().unwrap(),
        "--out-trace",
        trace.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    avicast(&args)
}

#[test]
fn run_writes_versioned_metrics_and_golden_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &scenario_arg("paper_fig5_14"), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("# avicast-metrics v1"));
    assert_eq!(csv.lines().count(), 3);
    let trace = std::fs::read_to_string(dir.path().join("t.trace")).unwrap();
    let golden = std::fs::read_to_string(golden_path("paper_fig5_14.trace")).unwrap();
    assert_eq!(trace, golden);
    for line in trace.lines().filter(|l| !l.starts_with('#')) {
        let keys: Vec<&str> = line
            .split(' ')
            .take(4)
            .map(|f| f.split('=').next().unwrap())
            .collect();
        assert_eq!(keys, ["t", "seq", "node", "ev"], "{line}");
    }
}

#[test]
fn strategy_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(
        dir.path(),
        &scenario_arg("burst"),
        &["--strategy", "ts-broadcast"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().starts_with("1,ts-broadcast,"));
}

#[test]
fn invalid_value_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "num_clients = 0\n").unwrap();
    let out = run_into(dir.path(), cfg.to_str().unwrap(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("num_clients"), "{}", stderr(&out));
    assert!(!dir.path().join("m.csv").exists());

    std::fs::write(&cfg, "[channel]\nd_up = -3\n").unwrap();
    let out = run_into(dir.path(), cfg.to_str().unwrap(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("d_up"), "{}", stderr(&out));
}

#[test]
fn unknown_key_and_missing_file_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.toml");
    std::fs::write(&cfg, "num_clientz = 4\n").unwrap();
    let out = run_into(dir.path(), cfg.to_str().unwrap(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("num_clientz"), "{}", stderr(&out));

    let out = run_into(dir.path(), "no/such/scenario", &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_usage_exits_1() {
    assert_eq!(avicast(&["run", "--seed", "1"]).status.code(), Some(1));
    let out = avicast(&["compare", "--config", "x", "--seeds", "9..2", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(avicast(&["--help"]).status.code(), Some(0));
}

#[test]
fn scenario_dir_env_resolves_bare_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_avicast"))
        .current_dir(dir.path())
        .env("AVICAST_SCENARIO_DIR", repo_root().join("scenarios"))
        .args(["run", "--config", "paper_fig5_14", "--seed", "1"])
        .args(["--out-metrics", "m.csv", "--out-trace", "t.trace"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = std::fs::read_to_string(dir.path().join("t.trace")).unwrap();
    assert_eq!(
        trace,
        std::fs::read_to_string(golden_path("paper_fig5_14.trace")).unwrap()
    );
}

#[test]
fn outputs_replace_existing_files_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.csv"), "stale contents\n").unwrap();
    let out = run_into(dir.path(), &scenario_arg("paper_fig5_14"), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["m.csv", "t.trace"]);
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("# avicast-metrics v1\n"));
}

#[test]
fn replay_accepts_clean_trace_and_rejects_tampered_one() {
    let golden = golden_path("paper_fig5_14.trace");
    let out = avicast(&["replay", "--trace", golden.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));

    let text = std::fs::read_to_string(&golden).unwrap();
    let line = text
        .lines()
        .position(|l| l.contains("node=client:1 ev=answer"))
        .unwrap()
        + 1;
    let tampered = text.replacen(
        "avi=1200 via=dta issued=1500",
        "avi=300 via=dta issued=1500",
        1,
    );
    assert_ne!(tampered, text);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.trace");
    std::fs::write(&path, tampered).unwrap();
    let out = avicast(&["replay", "--trace", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains("avi-safety") && err.contains(&format!("line {line}")),
        "{err}"
    );
}

#[test]
fn replay_rejects_unparseable_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.trace");
    std::fs::write(&path, "not a trace\n").unwrap();
    let out = avicast(&["replay", "--trace", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_writes_table_over_inclusive_range() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cmp.csv");
    let out = avicast(&[
        "compare",
        "--config",
        &scenario_arg("burst"),
        "--seeds",
        "1..3",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# avicast-compare v1"));
    assert_eq!(
        lines.next(),
        Some("# a=dta-multicast b=ts-broadcast seeds=1,2,3")
    );
    let uplinks = text
        .lines()
        .find(|l| l.starts_with("server_uplinks,"))
        .unwrap();
    assert_eq!(uplinks, "server_uplinks,1.000000,5.000000,0.200000");
}

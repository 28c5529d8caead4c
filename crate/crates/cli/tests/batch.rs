use std::process::{Command, Output};

use hearth_core::report::Report;
use hearth_core::sim::Trace;

fn hearth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hearth")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn nominal_run_passes_its_assertions() {
    let o = hearth(&["sim", "run", "nominal_100dev", "--assert"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("delivery        1.0000"), "{}", stdout(&o));
}

#[test]
fn same_seed_gives_identical_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let o = hearth(&["sim", "run", "alarms", "--seed", "5", "--trace", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn written_report_is_recomputable_from_the_written_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let report = dir.path().join("r.json");
    let o = hearth(&[
        "sim",
        "run",
        "lossy_home",
        "--trace",
        trace.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let t = Trace::from_jsonl(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    let written = std::fs::read_to_string(&report).unwrap();
    assert_eq!(written, Report::from_trace(&t).to_json());
    assert!(written.contains("\"scenario\": \"lossy_home\""));
}

#[test]
fn malformed_scenarios_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("truncated.json", r#"{"schema_version": 1,"#, "line"),
        ("typo.json", r#"{"schema_version": 1, "seed": 1, "duration_s": 5, "devics": []}"#, "devics"),
        (
            "badfield.json",
            r#"{"schema_version": 1, "seed": 1, "duration_s": 5, "devices": [{"name": "a", "kind": "plug", "x": "far"}]}"#,
            "devices[0].x",
        ),
    ];
    for (name, text, needle) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        let o = hearth(&["sim", "run", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(stderr(&o).contains(needle), "{name}: {}", stderr(&o));
    }
    assert_eq!(hearth(&["sim", "run", "no_such_scenario"]).status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_with_4() {
    let o = hearth(&["sim", "run", "burst_4", "--mode", "naive", "--assert"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("delivery"));
}

#[test]
fn compare_mac_tabulates_both_modes() {
    let o = hearth(&["sim", "compare-mac", "burst_4", "--modes", "selforg,naive", "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let row = |mode: &str| -> Vec<String> {
        out.lines()
            .find(|l| l.starts_with(mode))
            .unwrap_or_else(|| panic!("{mode} row missing:\n{out}"))
            .split_whitespace()
            .map(str::to_string)
            .collect()
    };
    let selforg: f64 = row("selforg")[2].parse().unwrap();
    let naive: f64 = row("naive")[2].parse().unwrap();
    assert_eq!(selforg, 1.0);
    assert!(naive < 1.0);
}

#[test]
fn single_sender_is_lossless_in_both_modes() {
    let o = hearth(&["sim", "compare-mac", "single_sender"]);
    let out = stdout(&o);
    for mode in ["selforg", "naive"] {
        let line = out.lines().find(|l| l.starts_with(mode)).unwrap();
        assert_eq!(line.split_whitespace().nth(1), Some("1.0000"), "{line}");
    }
}

#[test]
fn energy_report_marks_mains_and_flags_out_of_window_batteries() {
    let o = hearth(&["report", "energy", "sleepy_actuator"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let plug = out.lines().find(|l| l.starts_with("plug ")).expect("plug row");
    assert!(plug.contains("mains") && plug.contains("n/a"), "{plug}");

    let o = hearth(&["report", "energy", "nominal_100dev", "--json"]);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    for r in rows.iter().filter(|r| r["power"] == "battery") {
        let y = r["lifetime_years"].as_f64().unwrap();
        assert_eq!(r["flagged"].as_bool().unwrap(), !(0.5..=2.0).contains(&y), "{r}");
    }
}

#[test]
fn hearth_log_controls_verbosity() {
    let quiet = hearth(&["sim", "run", "single_sender"]);
    assert!(!stderr(&quiet).contains("running"));
    let loud = Command::new(env!("CARGO_BIN_EXE_hearth"))
        .args(["sim", "run", "single_sender"])
        .env("HEARTH_LOG", "info")
        .output()
        .unwrap();
    assert!(stderr(&loud).contains("running"), "{}", stderr(&loud));
}

#[test]
fn lists_bundled_scenarios() {
    let out = stdout(&hearth(&["scenarios"]));
    assert!(out.lines().any(|l| l == "nominal_100dev"));
    assert!(out.lines().any(|l| l == "capacity_255"));
}

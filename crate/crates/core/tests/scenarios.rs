mod common;

use common::*;
use hearth_core::home::World;
use hearth_core::scenario::{Scenario, ScenarioError, BUNDLED};
use hearth_core::sim::Trace;

#[test]
fn every_bundled_scenario_runs_to_the_end() {
    for (file, _) in BUNDLED {
        let name = file.trim_end_matches(".json");
        let (trace, _) = run(&scenario(name));
        let last = trace.events().last().expect("non-empty trace");
        assert_eq!(last.kind, "sim.end", "{name}");
    }
}

#[test]
fn same_seed_gives_byte_identical_traces() {
    for name in ["lossy_home", "alarms", "camera_symmetric"] {
        let a = run(&scenario(name)).0.to_jsonl();
        let b = run(&scenario(name)).0.to_jsonl();
        assert!(a == b, "{name} diverged between runs");
    }
}

#[test]
fn different_seeds_give_different_traces() {
    let a = run_seeded("lossy_home", 1, None).0;
    let b = run_seeded("lossy_home", 2, None).0;
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn trace_times_never_decrease() {
    let (trace, _) = run(&scenario("nominal_100dev"));
    assert!(trace.events().windows(2).all(|w| w[0].t <= w[1].t));
}

#[test]
fn jsonl_round_trips_and_has_the_documented_shape() {
    let (trace, _) = run(&scenario("alarms"));
    let text = trace.to_jsonl();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        let keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, ["detail", "entity", "kind", "t"]);
        assert!(obj["t"].is_u64());
    }
    let back = Trace::from_jsonl(&text).unwrap();
    assert_eq!(back.events(), trace.events());
    assert_eq!(back.digest(), trace.digest());
}

#[test]
fn scenario_survives_a_json_round_trip() {
    for (file, _) in BUNDLED {
        let s = scenario(file.trim_end_matches(".json"));
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}

#[test]
fn setting_a_sensor_reading_is_rejected_up_front() {
    let s = Scenario::from_json(
        r#"{"schema_version": 1, "duration_s": 5,
            "devices": [{"name": "th", "kind": "temp_humidity"}],
            "clients": [{"name": "a"}],
            "commands": [{"at_s": 1, "client": "a", "device": "th", "set": {"temp": 1}}]}"#,
    )
    .unwrap();
    match World::new(&s) {
        Err(ScenarioError::Invalid { field, .. }) => assert_eq!(field, "commands[0]"),
        other => panic!("expected invalid command, got {:?}", other.err()),
    }
}

#[test]
fn unknown_keys_are_parse_errors() {
    let err = Scenario::from_json(r#"{"schema_version": 1, "duration_s": 5, "devcies": []}"#).unwrap_err();
    assert!(matches!(err, ScenarioError::Parse { .. }), "{err}");
}

#[test]
fn wrong_schema_version_is_invalid() {
    let err = Scenario::from_json(r#"{"schema_version": 9, "duration_s": 5}"#)
        .and_then(|s| s.validate().map(|_| s))
        .unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid { .. }), "{err}");
}

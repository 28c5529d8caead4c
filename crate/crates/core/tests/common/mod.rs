#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hearth_core::home::World;
use hearth_core::mac::MacTimings;
use hearth_core::rendezvous::{NatType, PunchModel};
use hearth_core::report::Report;
use hearth_core::scenario::{bundled, Scenario};
use hearth_core::sim::{SimTime, Trace, TraceEvent};

pub fn scenario(name: &str) -> Scenario {
    bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"))
}

pub fn run(s: &Scenario) -> (Trace, Report) {
    let trace = World::new(s).expect("valid scenario").run();
    let report = Report::from_trace(&trace);
    (trace, report)
}

pub fn run_seeded(name: &str, seed: u64, mode: Option<&str>) -> (Trace, Report) {
    let mut s = scenario(name);
    s.seed = seed;
    if let Some(m) = mode {
        s.mac.mode = serde_json::from_value(serde_json::json!(m)).unwrap();
    }
    run(&s)
}

/// One device, nothing else: the idle-channel timing setup.
pub fn lone_device(seed: u64, kind: &str, battery: bool) -> Scenario {
    let power = if battery { "battery" } else { "mains" };
    Scenario::from_json(&format!(
        r#"{{"schema_version": 1, "seed": {seed}, "duration_s": 3,
            "devices": [{{"name": "d", "kind": "{kind}", "x": 10, "y": 0, "power": "{power}", "report_interval_s": 1}}]}}"#
    ))
    .unwrap()
}

pub fn of_kind<'a>(trace: &'a Trace, kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    trace.iter().filter(move |e| e.kind == kind)
}

pub fn count_by<F: Fn(&TraceEvent) -> String>(trace: &Trace, kind: &str, key: F) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for e in of_kind(trace, kind) {
        *m.entry(key(e)).or_default() += 1;
    }
    m
}

pub fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Average current written out from first principles: each activity spends
/// wake + mean backoff listening, its frame airtime transmitting, turnaround
/// plus ACK airtime listening, and the rest of the year asleep.
pub fn oracle_years(report_s: Option<f64>, report_bytes: usize, poll_s: Option<f64>, rate: f64) -> f64 {
    let (i_sleep, i_rx, i_tx, cap) = (0.0015, 18.5, 85.0, 2200.0);
    let t = MacTimings::default();
    let wake = 0.015;
    let backoff = 0.001 * (8.0 - 1.0) / 2.0;
    let turnaround = 0.0005;
    assert_eq!(t.wake_latency, SimTime::from_millis(15));
    assert_eq!(t.turnaround, SimTime::from_micros(500));
    // 9-byte header + 2-byte CRC around the payload; the ACK carries one byte.
    let ack = (9 + 1 + 2) as f64 * 8.0 / rate;
    let poll = (9 + 2) as f64 * 8.0 / rate;
    let mut extra = 0.0;
    for (period, frame) in [(report_s, report_bytes as f64 * 8.0 / rate), (poll_s, poll)] {
        if let Some(p) = period {
            let rx = wake + backoff + turnaround + ack;
            extra += (rx * (i_rx - i_sleep) + frame * (i_tx - i_sleep)) / p;
        }
    }
    cap / (i_sleep + extra) / (365.25 * 24.0)
}

/// Hole-punch outcomes written out by hand, one row per NAT type in the
/// order open, full_cone, restricted, port_restricted, symmetric.
pub fn punch_oracle(model: PunchModel) -> [[bool; 5]; 5] {
    const T: bool = true;
    const F: bool = false;
    match model {
        PunchModel::Classic => [
            [T, T, T, T, T],
            [T, T, T, T, T],
            [T, T, T, T, T],
            [T, T, T, T, F],
            [T, T, T, F, F],
        ],
        PunchModel::BothSymmetric => [
            [T, T, T, T, T],
            [T, T, T, T, T],
            [T, T, T, T, T],
            [T, T, T, T, T],
            [T, T, T, T, F],
        ],
    }
}

pub const ORDER: [NatType; 5] = [NatType::Open, NatType::FullCone, NatType::Restricted, NatType::PortRestricted, NatType::Symmetric];


pub fn check_commands(trace: &Trace) {
    let issued: BTreeSet<(String, u64)> = of_kind(trace, "cmd.issue")
        .map(|e| (e.get_str("client").unwrap().to_string(), e.get_u64("cmd").unwrap()))
        .collect();
    let mut done: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for e in of_kind(trace, "cmd.done") {
        *done.entry((e.get_str("client").unwrap().to_string(), e.get_u64("cmd").unwrap())).or_default() += 1;
    }
    assert!(!issued.is_empty());
    for id in &issued {
        assert_eq!(done.get(id), Some(&1), "command {id:?} resolved {:?} times", done.get(id));
    }
    assert_eq!(done.len(), issued.len());
}

pub fn check_actuation(trace: &Trace) {
    // A device never applies the same downlink twice.
    let mut applied: BTreeMap<String, usize> = BTreeMap::new();
    for e in of_kind(trace, "dev.apply").filter(|e| e.get_bool("duplicate") == Some(false)) {
        *applied.entry(e.entity.clone()).or_default() += 1;
    }
    let accepted_per_addr = count_by(trace, "cmd.accept", |e| e.get_u64("addr").unwrap().to_string());
    let addr_of: BTreeMap<String, String> = of_kind(trace, "net.joined")
        .map(|e| (e.entity.clone(), e.get_u64("addr").unwrap().to_string()))
        .collect();
    for (dev, n) in applied {
        let accepted = accepted_per_addr.get(&addr_of[&dev]).copied().unwrap_or(0);
        assert!(n <= accepted, "{dev}: {n} actuations for {accepted} commands");
    }
}

pub fn check_alarm_inboxes(trace: &Trace, clients: &[&str]) {
    let raised: BTreeSet<u64> = of_kind(trace, "alarm.raise").map(|e| e.get_u64("alarm_id").unwrap()).collect();
    let per_inbox = count_by(trace, "alarm.inbox", |e| {
        format!("{}/{}", e.get_str("client").unwrap(), e.get_u64("alarm_id").unwrap())
    });
    assert!(per_inbox.values().all(|&c| c == 1), "{per_inbox:?}");
    for c in clients {
        for id in &raised {
            assert!(per_inbox.contains_key(&format!("{c}/{id}")), "{c} missed alarm {id}");
        }
    }
}


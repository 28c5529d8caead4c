//! Run metrics, computed from a trace and nothing else.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::device::battery::HOURS_PER_YEAR;
use crate::sim::{Trace, TraceEvent};

/// Battery lifetimes outside this window (years) are flagged.
pub const LIFETIME_WINDOW_YEARS: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliveryStats {
    pub generated: u64,
    pub delivered: u64,
    pub ratio: f64,
}

impl DeliveryStats {
    fn new(generated: u64, delivered: u64) -> Self {
        DeliveryStats {
            generated,
            delivered,
            ratio: if generated == 0 { 1.0 } else { delivered as f64 / generated as f64 },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub p50_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

impl LatencyStats {
    pub fn from_micros(mut v: Vec<u64>) -> Self {
        v.sort_unstable();
        let ms = |x: u64| x as f64 / 1000.0;
        LatencyStats {
            count: v.len() as u64,
            p50_ms: percentile(&v, 50.0).map(ms),
            p99_ms: percentile(&v, 99.0).map(ms),
            max_ms: v.last().copied().map(ms),
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandStats {
    pub issued: u64,
    pub ok: u64,
    pub failed: u64,
    /// Failure counts by error code.
    pub errors: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEnergy {
    pub device: String,
    pub addr: Option<u8>,
    /// `battery` or `mains`.
    pub power: String,
    pub average_current_ma: Option<f64>,
    pub lifetime_years: Option<f64>,
    /// Battery lifetime outside the expected window.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacStats {
    pub frames_sent: u64,
    pub retries: u64,
    pub cca_failures: u64,
    pub failures: u64,
    pub corrupted: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinStats {
    pub joined: u64,
    /// Devices that gave up or were refused and never joined afterwards.
    pub failed: u64,
    pub discovery: LatencyStats,
    pub join: LatencyStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    pub devices: u64,
    pub delivery_ratio: f64,
    pub delivery: DeliveryStats,
    /// Delivery of frames generated by a synchronized burst, when present.
    pub burst: Option<DeliveryStats>,
    pub e2e_latency_p50_ms: Option<f64>,
    pub e2e_latency_p99_ms: Option<f64>,
    pub e2e_latency: LatencyStats,
    pub commands: CommandStats,
    pub alarm_latency: LatencyStats,
    pub alarms_raised: u64,
    pub energy: Vec<DeviceEnergy>,
    /// Shortest battery lifetime among battery devices.
    pub battery_estimate_years: Option<f64>,
    pub path_decisions: BTreeMap<String, u64>,
    pub mac: MacStats,
    pub joins: JoinStats,
    pub relay_payload_bytes: u64,
    pub trace_digest: String,
}

fn u(ev: &TraceEvent, k: &str) -> Option<u64> {
    ev.get_u64(k)
}

/// Energy row from an `energy.summary` event.
pub fn device_energy(ev: &TraceEvent) -> DeviceEnergy {
    let addr = u(ev, "addr").map(|a| a as u8);
    if ev.get_str("power") != Some("battery") {
        return DeviceEnergy {
            device: ev.entity.clone(),
            addr,
            power: "mains".into(),
            average_current_ma: None,
            lifetime_years: None,
            flagged: false,
        };
    }
    let f = |k: &str| ev.detail.get(k).and_then(|v| v.as_f64()).unwrap_or(0.0);
    let elapsed = f("elapsed_us");
    let charge = f("sleep_us") * f("sleep_ma") + f("rx_us") * f("rx_ma") + f("tx_us") * f("tx_ma");
    let avg = if elapsed > 0.0 { charge / elapsed } else { 0.0 };
    let years = if avg > 0.0 { f("capacity_mah") / avg / HOURS_PER_YEAR } else { f64::INFINITY };
    let (lo, hi) = LIFETIME_WINDOW_YEARS;
    DeviceEnergy {
        device: ev.entity.clone(),
        addr,
        power: "battery".into(),
        average_current_ma: Some(avg),
        lifetime_years: Some(years),
        flagged: !(lo..=hi).contains(&years),
    }
}

impl Report {
    pub fn from_trace(trace: &Trace) -> Report {
        let mut r = Report {
            trace_digest: trace.digest(),
            ..Report::default()
        };
        let mut generated = BTreeSet::new();
        let mut burst = BTreeSet::new();
        let mut delivered = BTreeSet::new();
        let mut cmd_lat = Vec::new();
        let mut alarm_lat = Vec::new();
        let mut discovery = Vec::new();
        let mut join = Vec::new();
        let mut unjoined = BTreeSet::new();
        for ev in trace.iter() {
            match ev.kind.as_str() {
                "sim.start" => {
                    r.scenario = ev.get_str("scenario").unwrap_or_default().to_string();
                    r.seed = u(ev, "seed").unwrap_or(0);
                    r.mode = ev.get_str("mode").unwrap_or_default().to_string();
                    r.devices = u(ev, "devices").unwrap_or(0);
                }
                "up.gen" => {
                    if let Some(id) = u(ev, "uid") {
                        generated.insert(id);
                        if ev.get_bool("burst") == Some(true) {
                            burst.insert(id);
                        }
                    }
                }
                "up.rx" => {
                    if let Some(id) = u(ev, "uid") {
                        delivered.insert(id);
                    }
                }
                "cmd.issue" => r.commands.issued += 1,
                "cmd.done" => {
                    if ev.get_bool("ok") == Some(true) {
                        r.commands.ok += 1;
                        cmd_lat.extend(u(ev, "latency_us"));
                    } else {
                        r.commands.failed += 1;
                        let code = ev.get_str("error").unwrap_or("unknown").to_string();
                        *r.commands.errors.entry(code).or_default() += 1;
                    }
                }
                "alarm.raise" => r.alarms_raised += 1,
                "alarm.inbox" => alarm_lat.extend(u(ev, "latency_us")),
                "energy.summary" => r.energy.push(device_energy(ev)),
                "path.decide" => {
                    let d = ev.get_str("decision").unwrap_or("unknown").to_string();
                    *r.path_decisions.entry(d).or_default() += 1;
                }
                "rf.tx" => r.mac.frames_sent += 1,
                "mac.retry" => r.mac.retries += 1,
                "mac.cca_fail" => r.mac.cca_failures += 1,
                "mac.fail" => r.mac.failures += 1,
                "rf.corrupt" => r.mac.corrupted += 1,
                "mac.dup" => r.mac.duplicates += 1,
                "net.joined" => {
                    r.joins.joined += 1;
                    unjoined.remove(&ev.entity);
                    join.extend(u(ev, "latency_us"));
                }
                "net.join_fail" | "net.join_reject" => {
                    unjoined.insert(ev.entity.clone());
                }
                "net.discover" => discovery.extend(u(ev, "latency_us")),
                "server.counters" => r.relay_payload_bytes = u(ev, "relay_payload_bytes").unwrap_or(0),
                _ => {}
            }
        }
        let hit = |set: &BTreeSet<u64>| set.iter().filter(|id| delivered.contains(id)).count() as u64;
        r.delivery = DeliveryStats::new(generated.len() as u64, hit(&generated));
        r.delivery_ratio = r.delivery.ratio;
        r.joins.failed = unjoined.len() as u64;
        if !burst.is_empty() {
            r.burst = Some(DeliveryStats::new(burst.len() as u64, hit(&burst)));
        }
        r.e2e_latency = LatencyStats::from_micros(cmd_lat);
        r.e2e_latency_p50_ms = r.e2e_latency.p50_ms;
        r.e2e_latency_p99_ms = r.e2e_latency.p99_ms;
        r.alarm_latency = LatencyStats::from_micros(alarm_lat);
        r.joins.discovery = LatencyStats::from_micros(discovery);
        r.joins.join = LatencyStats::from_micros(join);
        r.battery_estimate_years = r.energy.iter().filter_map(|e| e.lifetime_years).reduce(f64::min);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

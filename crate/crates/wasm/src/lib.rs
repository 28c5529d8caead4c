//! Browser bindings for the demo page: link budget, battery lifetime and a
//! small MAC comparison, all computed by `hearth-core`.

use hearth_core::device::battery::{battery_life_estimate, DutyCycle};
use hearth_core::home::World;
use hearth_core::mac::{EnergyParams, MacMode};
use hearth_core::report::Report;
use hearth_core::rf::{self, Environment, RadioProfile};
use hearth_core::scenario::Scenario;
use hearth_core::sim::SimTime;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn environment(indoor: bool) -> Environment {
    if indoor {
        Environment::indoor()
    } else {
        Environment::outdoor()
    }
}

fn profile(tx_power_dbm: f64) -> RadioProfile {
    RadioProfile { tx_power_dbm, ..RadioProfile::default() }
}

/// Link margin in dB at `points` evenly spaced distances up to
/// `max_distance_m`, interleaved as `[d0, m0, d1, m1, ...]`.
#[wasm_bindgen]
pub fn link_budget_curve(indoor: bool, tx_power_dbm: f64, max_distance_m: f64, points: usize) -> Vec<f64> {
    let env = environment(indoor);
    let p = profile(tx_power_dbm);
    let points = points.clamp(2, 2000);
    let mut out = Vec::with_capacity(points * 2);
    for i in 1..=points {
        let d = max_distance_m * i as f64 / points as f64;
        if let Ok(m) = rf::link_margin_db(d, &env, &p) {
            out.extend([d, m]);
        }
    }
    out
}

/// Distance at which the margin reaches zero.
#[wasm_bindgen]
pub fn max_range_m(indoor: bool, tx_power_dbm: f64) -> f64 {
    rf::max_range_m(&environment(indoor), &profile(tx_power_dbm))
}

/// Battery lifetime in years for each report interval (seconds). A
/// `poll_interval_s` of zero means the device never polls.
#[wasm_bindgen]
pub fn battery_curve(rate_bps: f64, report_bytes: usize, poll_interval_s: f64, intervals_s: Vec<f64>) -> Vec<f64> {
    let energy = EnergyParams::default();
    intervals_s
        .iter()
        .map(|&r| {
            let d = DutyCycle {
                report_interval: (r > 0.0).then(|| SimTime::from_secs_f64(r)),
                report_bytes,
                poll_interval: (poll_interval_s > 0.0).then(|| SimTime::from_secs_f64(poll_interval_s)),
                rate_bps,
                ..DutyCycle::default()
            };
            battery_life_estimate(&d, &energy).map(|e| e.lifetime_years()).unwrap_or(f64::NAN)
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct ModeResult {
    pub mode: &'static str,
    pub delivery: f64,
    pub frames: u64,
    pub retries: u64,
    pub corrupted: u64,
}

fn burst_scenario(senders: u32, seed: u64, mode: MacMode) -> Scenario {
    let text = format!(
        r#"{{"schema_version": 1, "name": "burst_demo", "seed": {seed}, "duration_s": 6, "join": "preprovisioned",
            "mac": {{"mode": "{}"}},
            "devices": [{{"name": "s", "kind": "temp_humidity", "count": {senders}, "radius_m": 20, "report_interval_s": 3600}}],
            "burst": {{"at_s": 2, "jitter_ms": 1}}}}"#,
        mode.label()
    );
    Scenario::from_json(&text).expect("demo scenario is valid")
}

/// Every sender reports at once; delivery of that burst per MAC mode.
pub fn compare_modes(senders: u32, seed: u64) -> Vec<ModeResult> {
    let senders = senders.clamp(1, 254);
    [MacMode::SelfOrganized, MacMode::Naive]
        .into_iter()
        .map(|mode| {
            let trace = World::new(&burst_scenario(senders, seed, mode)).expect("valid").run();
            let r = Report::from_trace(&trace);
            ModeResult {
                mode: mode.label(),
                delivery: r.burst.map(|b| b.ratio).unwrap_or(r.delivery.ratio),
                frames: r.mac.frames_sent,
                retries: r.mac.retries,
                corrupted: r.mac.corrupted,
            }
        })
        .collect()
}

/// [`compare_modes`] as JSON for the page.
#[wasm_bindgen]
pub fn compare_mac(senders: u32, seed: u64) -> String {
    serde_json::to_string(&compare_modes(senders, seed)).expect("serializable")
}

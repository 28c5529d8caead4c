mod common;

use common::*;
use hearth_core::device::battery::{battery_life_estimate, DutyCycle};
use hearth_core::mac::EnergyParams;
use hearth_core::sim::SimTime;
use proptest::prelude::*;

fn estimate_years(report_s: Option<f64>, report_bytes: usize, poll_s: Option<f64>, rate: f64) -> f64 {
    let profile = DutyCycle {
        report_interval: report_s.map(SimTime::from_secs_f64),
        report_bytes,
        poll_interval: poll_s.map(SimTime::from_secs_f64),
        rate_bps: rate,
        ..DutyCycle::default()
    };
    battery_life_estimate(&profile, &EnergyParams::default()).unwrap().lifetime_years()
}

#[test]
fn default_profile_lasts_between_half_a_year_and_two_years() {
    let d = DutyCycle::default();
    assert_eq!(d.report_interval, Some(SimTime::from_secs(10)));
    assert_eq!((d.report_bytes, d.rate_bps), (32, 10_000.0));
    let est = estimate_years(Some(10.0), 32, None, 10_000.0);
    let oracle = oracle_years(Some(10.0), 32, None, 10_000.0);
    assert!((0.5..=2.0).contains(&est), "{est}");
    assert!((est - oracle).abs() / oracle < 0.01, "{est} vs {oracle}");
}

proptest! {
    #[test]
    fn estimate_matches_the_closed_form(
        report in proptest::option::of(1.0f64..600.0),
        bytes in 11usize..=75,
        poll in proptest::option::of(0.5f64..60.0),
        rate in prop_oneof![Just(10_000.0), Just(38_400.0), Just(100_000.0), Just(256_000.0)],
    ) {
        let est = estimate_years(report, bytes, poll, rate);
        let oracle = oracle_years(report, bytes, poll, rate);
        prop_assert!((est - oracle).abs() / oracle < 0.01, "{} vs {}", est, oracle);
    }

    #[test]
    fn reporting_more_often_never_helps(a in 1.0f64..600.0, b in 1.0f64..600.0) {
        let (fast, slow) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(estimate_years(Some(fast), 32, None, 10_000.0) <= estimate_years(Some(slow), 32, None, 10_000.0));
    }
}

#[test]
fn mains_devices_have_no_lifetime() {
    let (_, r) = run(&scenario("sleepy_actuator"));
    let plug = r.energy.iter().find(|e| e.device == "plug").unwrap();
    assert_eq!(plug.power, "mains");
    assert!(plug.lifetime_years.is_none() && !plug.flagged);
}

#[test]
fn simulated_ledgers_account_for_every_microsecond() {
    let (trace, _) = run(&scenario("nominal_100dev"));
    let mut battery = 0;
    for e in of_kind(&trace, "energy.summary").filter(|e| e.get_str("power") == Some("battery")) {
        battery += 1;
        let sum = e.get_u64("sleep_us").unwrap() + e.get_u64("rx_us").unwrap() + e.get_u64("tx_us").unwrap();
        assert_eq!(sum, e.get_u64("elapsed_us").unwrap(), "{}", e.entity);
    }
    assert!(battery > 50);
}

#[test]
fn ten_kbps_reporter_lands_in_the_lifetime_window() {
    let s = hearth_core::scenario::Scenario::from_json(
        r#"{"schema_version": 1, "seed": 5, "duration_s": 1800,
            "radio": {"rate_bps": 10000},
            "mac": {"timings": {"ack_timeout": 12000, "superframe_period": 240000}},
            "devices": [{"name": "th", "kind": "temp_humidity", "x": 10, "y": 0}]}"#,
    )
    .unwrap();
    let (_, r) = run(&s);
    let years = r.energy[0].lifetime_years.unwrap();
    assert!((0.5..=2.0).contains(&years), "{years}");
    assert!(!r.energy[0].flagged);
}

#[test]
fn lossy_links_push_a_poller_out_of_the_window() {
    let (_, r) = run(&scenario("lossy_home"));
    assert!(r.energy.iter().any(|e| e.flagged));
}

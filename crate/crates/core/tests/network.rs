mod common;

use common::*;
use hearth_core::device::{DeviceDescriptor, Power, SleepProfile};
use hearth_core::net::{NetError, NetworkRegistry};

fn descriptor(i: u64) -> DeviceDescriptor {
    DeviceDescriptor {
        device_id: 0x1000 + i,
        name: format!("d{i}"),
        kind: 1,
        addr: None,
        sleep_profile: SleepProfile {
            report_interval: None,
            poll_interval: None,
        },
        power: Power::Mains,
    }
}

#[test]
fn registry_takes_254_slaves_then_refuses() {
    let mut reg = NetworkRegistry::new(1);
    let results: Vec<_> = (0..255).map(|i| reg.join(descriptor(i))).collect();
    let addrs: Vec<u8> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    assert_eq!(addrs, (1..=254).collect::<Vec<u8>>());
    assert!(matches!(results[254], Err(NetError::Capacity(254))));
}

#[test]
fn capacity_scenario_accepts_254_and_rejects_one() {
    let (trace, report) = run(&scenario("capacity_255"));
    assert_eq!(report.joins.joined, 254);
    assert_eq!(of_kind(&trace, "net.join_reject").count(), 1);
}

#[test]
fn over_the_air_joins_hit_the_same_limit() {
    let mut s = scenario("capacity_255");
    s.join = serde_json::from_value(serde_json::json!("over_air")).unwrap();
    s.join_spread_s = 10.0;
    s.duration_s = 40.0;
    let (trace, report) = run(&s);
    assert_eq!(report.joins.joined, 254);
    let rejected: Vec<_> = of_kind(&trace, "net.join_reject").map(|e| e.entity.clone()).collect();
    assert_eq!(rejected.len(), 1, "{rejected:?}");
}

#[test]
fn wake_takes_15ms() {
    let (trace, _) = run(&lone_device(3, "temp_humidity", true));
    let wakes: Vec<u64> = of_kind(&trace, "mac.awake").filter_map(|e| e.get_u64("latency_us")).collect();
    assert!(!wakes.is_empty());
    assert!(wakes.iter().all(|&w| w == 15_000), "{wakes:?}");
}

#[test]
fn idle_channel_join_takes_15ms() {
    for seed in 0..50 {
        let (trace, _) = run(&lone_device(seed, "plug", false));
        let joined = of_kind(&trace, "net.joined").next().expect("joined");
        let l = joined.get_u64("latency_us").unwrap();
        assert!((14_000..=16_000).contains(&l), "seed {seed}: {l}us");
    }
}

#[test]
fn median_discovery_is_about_30ms() {
    let samples: Vec<u64> = (0..1000)
        .map(|seed| {
            let (trace, _) = run(&lone_device(seed, "plug", false));
            let l = of_kind(&trace, "net.discover").next().and_then(|e| e.get_u64("latency_us"));
            l.expect("discovered")
        })
        .collect();
    let m = median(samples) as f64 / 1000.0;
    assert!((24.0..=36.0).contains(&m), "median discovery {m}ms");
}

#[test]
fn selforg_delivers_at_least_99_percent_with_100_reporters() {
    for seed in 1..=10 {
        for name in ["nominal_100dev", "burst_100"] {
            let (_, r) = run_seeded(name, seed, None);
            assert!(r.delivery.ratio >= 0.99, "{name} seed {seed}: {}", r.delivery.ratio);
        }
    }
}

#[test]
fn naive_mac_loses_frames_with_four_simultaneous_senders() {
    for seed in 1..=10 {
        let (_, naive) = run_seeded("burst_4", seed, Some("naive"));
        let (_, selforg) = run_seeded("burst_4", seed, Some("selforg"));
        let n = naive.burst.unwrap().ratio;
        let s = selforg.burst.unwrap().ratio;
        assert!(n < 0.9, "seed {seed}: naive {n}");
        assert_eq!(s, 1.0, "seed {seed}");
    }
}

#[test]
fn naive_mac_is_fine_with_a_single_sender() {
    let (_, r) = run_seeded("single_sender", 4, Some("naive"));
    assert_eq!(r.delivery.ratio, 1.0);
}

#[test]
fn joined_addresses_are_unique() {
    let (trace, _) = run(&scenario("nominal_100dev"));
    let by_addr = count_by(&trace, "net.joined", |e| e.get_u64("addr").unwrap().to_string());
    assert_eq!(by_addr.len(), 100);
    assert!(by_addr.values().all(|&c| c == 1));
}

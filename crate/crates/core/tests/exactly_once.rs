mod common;

use common::*;

#[test]
fn nominal_home_resolves_every_command_once() {
    let (trace, report) = run(&scenario("nominal_100dev"));
    check_commands(&trace);
    check_actuation(&trace);
    check_alarm_inboxes(&trace, &["alice", "bob"]);
    assert_eq!(report.commands.failed, 0);
}

#[test]
fn lossy_home_still_resolves_every_command_once() {
    for seed in [33, 34, 35, 36] {
        let (trace, report) = run_seeded("lossy_home", seed, None);
        check_commands(&trace);
        check_actuation(&trace);
        check_alarm_inboxes(&trace, &["alice", "bob"]);
        // The fault plan must actually bite.
        assert!(report.mac.retries > 0 && report.mac.duplicates > 0, "seed {seed}");
    }
}

#[test]
fn offline_user_gets_queued_alarms_once_after_reconnect() {
    let (trace, _) = run(&scenario("alarms"));
    check_alarm_inboxes(&trace, &["alice", "bob", "carol"]);
    let carol_first = of_kind(&trace, "alarm.inbox").find(|e| e.get_str("client") == Some("carol")).unwrap();
    assert!(carol_first.t.as_secs_f64() >= 60.0);
}

#[test]
fn device_sees_the_exact_bytes_the_client_sent() {
    let (trace, _) = run(&scenario("sleepy_actuator"));
    let issued: Vec<String> = of_kind(&trace, "cmd.issue")
        .filter(|e| e.get_u64("addr") != Some(200))
        .map(|e| e.get_str("tlv").unwrap().to_string())
        .collect();
    let seen: Vec<String> = of_kind(&trace, "dev.apply").map(|e| e.get_str("tlv").unwrap().to_string()).collect();
    assert_eq!(issued, seen);
}

#[test]
fn unknown_address_fails_fast() {
    let (trace, report) = run(&scenario("sleepy_actuator"));
    assert_eq!(report.commands.errors.get("unknown_device"), Some(&1));
    let done = of_kind(&trace, "cmd.done").find(|e| e.get_u64("addr") == Some(200)).unwrap();
    assert!(done.get_u64("latency_us").unwrap() < 1_000_000);
}

#[test]
fn sleeping_actuator_commands_arrive_via_polling_within_3s() {
    let (trace, _) = run(&scenario("sleepy_actuator"));
    let curtain_addr = of_kind(&trace, "net.joined").find(|e| e.entity == "curtain").unwrap().get_u64("addr");
    let lat: Vec<u64> = of_kind(&trace, "cmd.done")
        .filter(|e| e.get_u64("addr") == curtain_addr)
        .map(|e| e.get_u64("latency_us").unwrap())
        .collect();
    assert_eq!(lat.len(), 2);
    assert!(lat.iter().all(|&l| l <= 3_000_000), "{lat:?}");
}

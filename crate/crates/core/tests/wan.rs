mod common;

use common::*;
use hearth_core::camera::replay;
use hearth_core::rendezvous::{
    decide_path, simulate_load, NatType, PathKind, PunchModel, RendezvousConfig, DEFAULT_MAX_SESSIONS,
};
use hearth_core::sim::SimTime;
use hearth_core::wan::{decode_wire, encode_wire, EnvelopeKind, Principal, WanEnvelope};

const SMALL: usize = 256;
const LARGE: usize = 65_536;
const THRESHOLD: usize = 4096;

#[test]
fn path_decisions_match_the_truth_table_for_all_50_cases() {
    for model in [PunchModel::Classic, PunchModel::BothSymmetric] {
        let table = punch_oracle(model);
        for (i, a) in ORDER.iter().enumerate() {
            for (j, b) in ORDER.iter().enumerate() {
                assert_eq!(decide_path(SMALL, *a, *b, THRESHOLD, model).decision, PathKind::Relay);
                let want = if table[i][j] { PathKind::P2pDirect } else { PathKind::P2pFailedFallbackRelay };
                assert_eq!(decide_path(LARGE, *a, *b, THRESHOLD, model).decision, want, "{a:?}/{b:?} {model:?}");
            }
        }
    }
}

#[test]
fn threshold_is_inclusive() {
    let d = |n| decide_path(n, NatType::Open, NatType::Open, THRESHOLD, PunchModel::Classic).decision;
    assert_eq!(d(THRESHOLD), PathKind::Relay);
    assert_eq!(d(THRESHOLD + 1), PathKind::P2pDirect);
}

#[test]
fn direct_streams_put_no_payload_through_the_server() {
    let (trace, r) = run(&scenario("camera_open"));
    assert_eq!(r.path_decisions.get("p2p_direct"), Some(&2));
    assert!(of_kind(&trace, "cam.rx").count() > 0);
    let relayed: Vec<_> = of_kind(&trace, "wan.tx").collect();
    assert!(relayed.iter().all(|e| e.get_str("kind") != Some("CAM_DATA")));
    // Everything the server forwarded is accounted for by non-stream envelopes.
    let bytes: u64 = relayed.iter().map(|e| e.get_u64("bytes").unwrap()).sum();
    assert_eq!(r.relay_payload_bytes, bytes);
}

#[test]
fn failed_punch_falls_back_to_the_relay() {
    let (trace, r) = run(&scenario("camera_symmetric"));
    assert_eq!(r.path_decisions.get("p2p_failed_fallback_relay"), Some(&1));
    let relayed = of_kind(&trace, "wan.tx").filter(|e| e.get_str("kind") == Some("CAM_DATA")).count();
    assert!(relayed > 0);
    let alice: Vec<_> = of_kind(&trace, "cam.rx").filter(|e| e.entity == "alice").collect();
    assert!(alice.iter().all(|e| e.get_str("path") == Some("relay")));
}

#[test]
fn stream_chunks_arrive_in_order_without_gaps() {
    for name in ["camera_open", "camera_symmetric"] {
        let (trace, _) = run(&scenario(name));
        let mut last: std::collections::BTreeMap<(String, u64), u64> = Default::default();
        for e in of_kind(&trace, "cam.rx") {
            let key = (e.entity.clone(), e.get_u64("stream").unwrap());
            let seq = e.get_u64("seq").unwrap();
            if let Some(prev) = last.insert(key, seq) {
                assert!(seq > prev);
            }
            assert_eq!(e.get_u64("gap"), Some(0));
        }
    }
}

#[test]
fn file_sink_writes_a_replayable_chunk_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("porch.chunks");
    let mut s = scenario("camera_open");
    s.streams[0].sink = Some(serde_json::from_value(serde_json::json!({"file": path.to_str().unwrap()})).unwrap());
    let (trace, _) = run(&s);
    let chunks = replay(&std::fs::read(&path).unwrap()).unwrap();
    let sent = of_kind(&trace, "cam.chunk").filter(|e| e.get_u64("stream") == Some(chunks[0].stream_id)).count();
    assert_eq!(chunks.len(), sent);
    assert!(chunks.windows(2).all(|w| w[1].seq == w[0].seq + 1));
}

#[test]
fn server_holds_6000_sessions_for_five_minutes() {
    let config = RendezvousConfig::default();
    assert_eq!(config.heartbeat_interval, SimTime::from_secs(30));
    let r = simulate_load(config, DEFAULT_MAX_SESSIONS, SimTime::from_secs(300), SimTime::from_secs(10), 7);
    assert_eq!(r.login_failures, 0);
    assert_eq!(r.counters.dropped_sessions, 0);
    assert_eq!(r.online_at_end, 6000);
    assert_eq!(r.counters.peak_sessions, 6000);
    // Every session beats once per 30 s after its login phase.
    assert!(r.counters.heartbeats >= 6000 * 9, "{}", r.counters.heartbeats);
}

#[test]
fn session_6001_is_refused() {
    let r = simulate_load(RendezvousConfig::default(), 6001, SimTime::from_secs(40), SimTime::from_secs(10), 7);
    assert_eq!(r.login_failures, 1);
    assert_eq!(r.online_at_end, 6000);
}

#[test]
fn heartbeats_slower_than_the_timeout_drop_sessions() {
    let config = RendezvousConfig {
        heartbeat_interval: SimTime::from_secs(120),
        ..RendezvousConfig::default()
    };
    let r = simulate_load(config, 50, SimTime::from_secs(300), SimTime::from_secs(10), 1);
    assert_eq!(r.counters.dropped_sessions, 50);
}

#[test]
fn wire_frame_is_a_big_endian_length_then_json() {
    let env = WanEnvelope::new(
        9,
        EnvelopeKind::Cmd,
        Principal::user("alice"),
        Principal::gateway("home"),
        serde_json::json!({"addr": 3, "tlv": "010101"}),
    );
    let bytes = encode_wire(&env);
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    assert_eq!(len, bytes.len() - 4);
    let v: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
    assert_eq!(v["msg_id"], 9);
    assert_eq!(v["kind"], "CMD");
    let (back, used) = decode_wire(&bytes).unwrap().unwrap();
    assert_eq!(used, bytes.len());
    assert_eq!(back, env);
    assert!(decode_wire(&bytes[..bytes.len() - 1]).unwrap().is_none());
}

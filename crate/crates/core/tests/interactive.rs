mod common;

use common::*;
use hearth_core::camera::{CameraAction, Quality};
use hearth_core::device::{DeviceMessage, TlvType};
use hearth_core::gateway::GatewayError;
use hearth_core::home::{RunPhase, World};
use hearth_core::sim::SimTime;

fn demo() -> World {
    let mut w = World::new(&scenario("demo_home")).unwrap();
    w.enable_panel();
    w.run_until(SimTime::from_secs(10));
    w
}

#[test]
fn device_snapshot_lists_every_joined_device() {
    let w = demo();
    let devs = w.devices();
    assert_eq!(devs.len(), 9);
    assert!(devs.iter().all(|d| d.joined && d.addr.is_some()));
    let plug = devs.iter().find(|d| d.name == "living-plug").unwrap();
    assert_eq!(plug.power, "mains");
    assert!(plug.battery_pct.is_none());
    assert_eq!(plug.settable, ["on"]);
    let curtain = devs.iter().find(|d| d.kind == "curtain").unwrap();
    assert!(curtain.battery_pct.unwrap() > 99.0);
}

#[test]
fn submitted_command_updates_state_and_emits_panel_events() {
    let mut w = demo();
    let plug = w.devices().into_iter().find(|d| d.name == "living-plug").unwrap();
    let addr = plug.addr.unwrap();
    let before = plug.state["on"];
    let panel = w.client_index("panel").unwrap();
    let want = 1 - before;
    let msg = DeviceMessage::new(TlvType::SetActuator, vec![want as u8]);
    w.submit_command(panel, addr, &msg).unwrap();
    w.drain_panel();
    w.run_until(w.now() + SimTime::from_secs(3));
    assert_eq!(w.device_by_addr(addr).unwrap().state["on"], want);
    let events = w.drain_panel();
    let ack = events.iter().find(|e| e.kind == "CMD_ACK").expect("CMD_ACK");
    assert_eq!(ack.payload["ok"], true);
    assert!(events.iter().any(|e| e.kind == "STATE"));
}

#[test]
fn alarms_are_paged_and_acknowledgeable() {
    let mut w = demo();
    w.run_until(SimTime::from_secs(40));
    let (total, page) = w.alarms_page(0, 10);
    assert_eq!(total, 1);
    assert!(!page[0].acknowledged);
    let id = page[0].alarm.alarm_id;
    assert!(w.acknowledge_alarm(id));
    assert!(w.alarms_page(0, 10).1[0].acknowledged);
    assert!(!w.acknowledge_alarm(999));
    assert!(w.alarms_page(1, 10).1.is_empty());
}

#[test]
fn admin_config_requires_the_admin_role() {
    let mut s = scenario("demo_home");
    s.clients[1].role = serde_json::from_value(serde_json::json!("user")).unwrap();
    let mut w = World::new(&s).unwrap();
    w.run_until(SimTime::from_secs(2));
    let admin = w.client_index("panel").unwrap();
    let user = w.client_index("alice").unwrap();
    let cfg = w.admin_set(admin, "ssid", &serde_json::json!("hearth-5g")).unwrap();
    assert_eq!(cfg.ssid, "hearth-5g");
    let err = w.admin_set(user, "ssid", &serde_json::json!("x")).unwrap_err();
    assert!(matches!(err, GatewayError::Forbidden), "{err:?}");
    assert_eq!(w.router_config().ssid, "hearth-5g");
}

#[test]
fn camera_control_and_stream_on_demand() {
    let mut w = demo();
    let panel = w.client_index("panel").unwrap();
    let cam = w.camera_index("porch").unwrap();
    w.submit_camera_control(panel, cam, CameraAction::Left, 45.0).unwrap();
    let stream = w.submit_stream(panel, cam, Quality::Low, SimTime::from_secs(2)).unwrap();
    w.run_until(w.now() + SimTime::from_secs(4));
    assert_eq!(w.camera(cam).orientation().pan_deg, -45.0);
    let events = w.drain_panel();
    assert!(events.iter().any(|e| e.kind == "PATH"));
    let rx = w.trace().iter().filter(|e| e.kind == "cam.rx" && e.get_u64("stream") == Some(stream)).count();
    assert!(rx > 0);
}

#[test]
fn run_until_stops_at_the_end_of_the_drain_period() {
    let mut s = scenario("sleepy_actuator");
    s.duration_s = 5.0;
    s.commands.clear();
    let mut w = World::new(&s).unwrap();
    assert!(w.run_until(SimTime::from_secs(1)));
    assert_eq!(w.run_phase(), RunPhase::Running);
    assert!(!w.run_until(SimTime::from_secs(5000)));
    assert_eq!(w.run_phase(), RunPhase::Finished);
    assert_eq!(w.now(), w.end_time());
    assert_eq!(w.trace().events().last().unwrap().kind, "sim.end");
}

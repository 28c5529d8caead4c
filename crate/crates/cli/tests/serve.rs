use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use futures_util::StreamExt;
use hearth_core::device::{DeviceMessage, TlvType};
use hearth_core::wan::{decode_wire, encode_wire, CmdPayload, EnvelopeKind, Principal, WanEnvelope};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Server {
    child: Child,
    http: SocketAddr,
    wire: SocketAddr,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start(extra: &[&str]) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_hearth"))
        .args(["serve", "demo_home", "--bind", "127.0.0.1:0", "--wire-bind", "127.0.0.1:0", "--speed", "50"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut addr = |prefix: &str| -> SocketAddr {
        let line = lines.next().unwrap().unwrap();
        line.strip_prefix(prefix).unwrap_or_else(|| panic!("unexpected line {line}")).parse().unwrap()
    };
    let http = addr("http listening on ");
    let wire = addr("wire listening on ");
    Server { child, http, wire }
}

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
    let mut s = TcpStream::connect(addr).unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let (head, body) = resp.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

fn wait_for<T>(what: &str, mut f: impl FnMut() -> Option<T>) -> T {
    let deadline = Instant::now() + Duration::from_secs(15);
    loop {
        if let Some(v) = f() {
            return v;
        }
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn joined_devices(s: &Server) -> Vec<Value> {
    wait_for("all devices to join", || {
        let (_, v) = http(s.http, "GET", "/devices", None);
        let list = v.as_array()?.clone();
        list.iter().all(|d| d["joined"] == true).then_some(list)
    })
}

fn addr_of(devices: &[Value], name: &str) -> u8 {
    devices.iter().find(|d| d["name"] == name).unwrap()["addr"].as_u64().unwrap() as u8
}

#[test]
fn serves_devices_config_and_alarms() {
    let s = start(&[]);
    let devices = joined_devices(&s);
    assert_eq!(devices.len(), 9);
    let plug = devices.iter().find(|d| d["name"] == "living-plug").unwrap();
    assert_eq!(plug["kind"], "plug");
    assert_eq!(plug["power"], "mains");

    let (code, cfg) = http(s.http, "GET", "/config", None);
    assert_eq!((code, cfg["ssid"].clone()), (200, json!("hearth")));
    let (code, cfg) = http(s.http, "PUT", "/config/ssid", Some(json!("upstairs")));
    assert_eq!((code, cfg["ssid"].clone()), (200, json!("upstairs")));
    assert_eq!(http(s.http, "PUT", "/config/colour", Some(json!("red"))).0, 404);

    // The kitchen gas alarm fires 30 simulated seconds in.
    let page = wait_for("the gas alarm", || {
        let (_, v) = http(s.http, "GET", "/alarms?offset=0&limit=5", None);
        (v["total"].as_u64()? >= 1).then_some(v)
    });
    let id = page["items"][0]["alarm"]["alarm_id"].as_u64().unwrap();
    assert_eq!(http(s.http, "POST", &format!("/alarms/{id}/ack"), None).0, 200);
    let (_, v) = http(s.http, "GET", "/alarms", None);
    assert_eq!(v["items"][0]["acknowledged"], true);
    assert_eq!(http(s.http, "POST", "/alarms/999/ack", None).0, 404);

    let (code, cams) = http(s.http, "GET", "/cameras", None);
    assert_eq!(code, 200);
    assert_eq!(cams[0]["name"], "porch");
}

#[test]
fn bad_command_bodies_are_rejected() {
    let s = start(&[]);
    assert_eq!(http(s.http, "POST", "/devices/1/command", Some(json!({}))).0, 400);
    assert_eq!(http(s.http, "POST", "/devices/1/command", Some(json!({"set": {"on": 1}, "client": "mallory"}))).0, 404);
    assert_eq!(http(s.http, "POST", "/devices/1/command", Some(json!({"sett": 1}))).0, 422);
}

#[tokio::test(flavor = "multi_thread")]
async fn http_command_produces_events_on_the_websocket() {
    let s = start(&[]);
    let devices = tokio::task::block_in_place(|| joined_devices(&s));
    let addr = addr_of(&devices, "living-plug");
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/events", s.http)).await.unwrap();
    let first: Value = match ws.next().await.unwrap().unwrap() {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("{other:?}"),
    };
    assert_eq!(first["kind"], "SNAPSHOT");
    assert!(first["t"].is_f64());

    let (code, accepted) = tokio::task::block_in_place(|| {
        http(s.http, "POST", &format!("/devices/{addr}/command"), Some(json!({"set": {"on": 1}})))
    });
    assert_eq!(code, 202);
    let cmd_id = accepted["cmd_id"].clone();

    let mut saw_state = false;
    let mut saw_ack = false;
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    while !(saw_state && saw_ack) {
        let msg = tokio::time::timeout_at(deadline, ws.next()).await.expect("events arrive").unwrap().unwrap();
        let Message::Text(t) = msg else { continue };
        let ev: Value = serde_json::from_str(&t).unwrap();
        assert!(ev.get("t").is_some() && ev.get("kind").is_some() && ev.get("payload").is_some());
        let p = &ev["payload"];
        match ev["kind"].as_str().unwrap() {
            "CMD_ACK" if p["cmd_id"] == cmd_id => {
                assert_eq!(p["ok"], true);
                saw_ack = true;
            }
            "REPORT" | "STATE" if p["addr"] == addr && p["state"]["on"] == 1 => saw_state = true,
            _ => {}
        }
    }
    ws.close(None).await.unwrap();
}

fn read_envelope(s: &mut TcpStream) -> WanEnvelope {
    let mut len = [0u8; 4];
    s.read_exact(&mut len).unwrap();
    let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
    s.read_exact(&mut body).unwrap();
    let mut frame = len.to_vec();
    frame.extend(body);
    decode_wire(&frame).unwrap().unwrap().0
}

#[test]
fn wire_endpoint_authenticates_and_relays_command_outcomes() {
    let s = start(&[]);
    let devices = joined_devices(&s);
    let addr = addr_of(&devices, "hall-bulb");
    let mut c = TcpStream::connect(s.wire).unwrap();
    c.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let gw = Principal::gateway("home");
    let alice = Principal::user("alice");

    let cmd = CmdPayload::new(addr, &DeviceMessage::new(TlvType::SetActuator, vec![1, 40]));
    c.write_all(&encode_wire(&WanEnvelope::new(1, EnvelopeKind::Cmd, alice.clone(), gw.clone(), json!(cmd)))).unwrap();
    let refused = read_envelope(&mut c);
    assert_eq!(refused.payload["ok"], false);

    let bad = WanEnvelope::new(2, EnvelopeKind::Auth, alice.clone(), Principal::Server, json!({"secret": "nope"}));
    c.write_all(&encode_wire(&bad)).unwrap();
    assert_eq!(read_envelope(&mut c).payload["ok"], false);

    let auth = WanEnvelope::new(3, EnvelopeKind::Auth, alice.clone(), Principal::Server, json!({"secret": "alice-pw"}));
    c.write_all(&encode_wire(&auth)).unwrap();
    let ok = read_envelope(&mut c);
    assert_eq!((ok.kind, ok.payload["ok"].clone()), (EnvelopeKind::Auth, json!(true)));

    c.write_all(&encode_wire(&WanEnvelope::new(4, EnvelopeKind::Cmd, alice, gw, json!(cmd)))).unwrap();
    let mut accepted = None;
    loop {
        let env = read_envelope(&mut c);
        if env.kind != EnvelopeKind::CmdAck {
            continue;
        }
        if env.payload["accepted"] == true {
            accepted = Some(env.payload["cmd_id"].clone());
        } else if Some(&env.payload["cmd_id"]) == accepted.as_ref() {
            assert_eq!(env.payload["ok"], true, "{}", env.payload);
            break;
        }
    }
}

#[test]
fn occupied_port_exits_with_3() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().to_string();
    let o = Command::new(env!("CARGO_BIN_EXE_hearth")).args(["serve", "demo_home", "--bind", &port]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn interrupt_flushes_the_trace_and_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("serve.jsonl");
    let mut s = start(&["--trace", trace.to_str().unwrap()]);
    joined_devices(&s);
    let pid = s.child.id().to_string();
    assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
    let status = s.child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&trace).unwrap();
    let t = hearth_core::sim::Trace::from_jsonl(&text).unwrap();
    assert!(t.iter().any(|e| e.kind == "net.joined"));
}

//! The simulated home: one event loop driving the radio medium, the
//! coordinator and its devices, the gateway, the rendezvous server, user
//! clients and cameras.
//!
//! Built from a [`Scenario`], a [`World`] is fully deterministic: every
//! random draw comes from streams derived from the scenario seed, and the
//! trace it produces is a pure function of the scenario.

mod radio;
mod wan;

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::camera::{Camera, CameraAction, ChunkSink, GapDetector, Quality};
use crate::client::{ClientCore, ClientError};
use crate::device::{DeviceDescriptor, DeviceMessage, KindRegistry, Power, SleepProfile, Terminal};
use crate::gateway::{AlarmMode, AlarmRecord, Gateway, GatewayConfig, GatewayError, RouterConfig};
use crate::mac::{DedupWindow, EnergyLedger, Frame, GtsTable, MacMode, MacTimings, RadioState, Superframe};
use crate::net::NetworkRegistry;
use crate::rendezvous::{NatType, PathKind, RendezvousConfig, RendezvousServer};
use crate::rf::{Medium, NodeId, Position, TxId};
use crate::scenario::{AlarmModeSpec, DeviceInstance, Scenario, ScenarioError};
use crate::sim::{EventQueue, SimRng, SimTime, Trace, TraceEvent};
use crate::wan::{Principal, WanEnvelope};

const MAC_STREAM: u64 = 1;
const FAULT_STREAM: u64 = 2;
const GATEWAY_STREAM: u64 = 3;
const SCHEDULE_STREAM: u64 = 4;
const MEDIUM_STREAM: u64 = 5;

/// How long a device keeps its receiver on after learning that downlink
/// frames are pending, extended by each frame it receives.
pub const LISTEN_WINDOW: SimTime = SimTime::from_millis(100);

/// Busy carrier-sense results tolerated per attempt before the attempt
/// counts as a failed retry.
pub const MAX_BUSY_PER_ATTEMPT: u32 = 8;

/// JOIN_REQ retransmissions after the first before giving up.
pub const JOIN_RETRIES: u32 = 4;

/// Pause before a device that gave up joining scans again.
const REJOIN_DELAY: SimTime = SimTime::from_secs(2);
const REJOIN_SPREAD_UNITS: u64 = 200;
const SWEEP_PERIOD: SimTime = SimTime::from_secs(10);

/// One event pushed to the control panel (WebSocket `/events`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEvent {
    pub t: SimTime,
    pub kind: String,
    pub payload: Value,
}

/// Snapshot of one device for the panel and the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceView {
    pub name: String,
    pub addr: Option<u8>,
    pub kind: String,
    pub kind_id: u8,
    pub power: String,
    pub battery_pct: Option<f64>,
    pub joined: bool,
    pub state: BTreeMap<String, i32>,
    pub settable: Vec<String>,
    pub armed: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum What {
    Report,
    Alarm,
    CmdAck,
    Poll,
    JoinReq,
    JoinAck,
    Downlink,
    Ack,
    Beacon,
}

impl What {
    pub(crate) fn label(self) -> &'static str {
        match self {
            What::Report => "report",
            What::Alarm => "alarm",
            What::CmdAck => "cmd_ack",
            What::Poll => "poll",
            What::JoinReq => "join_req",
            What::JoinAck => "join_ack",
            What::Downlink => "downlink",
            What::Ack => "ack",
            What::Beacon => "beacon",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OutFrame {
    pub frame: Frame,
    pub needs_ack: bool,
    pub what: What,
    pub uid: Option<u64>,
    pub cmd: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Idle,
    Backoff,
    Tx,
    WaitAck,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeMac {
    pub queue: VecDeque<OutFrame>,
    pub phase: Phase,
    pub retries: u32,
    pub busy: u32,
    pub gen: u64,
    pub next_seq: u8,
    pub dedup: DedupWindow,
}

impl NodeMac {
    fn new(dedup: usize) -> Self {
        NodeMac {
            queue: VecDeque::new(),
            phase: Phase::Idle,
            retries: 0,
            busy: 0,
            gen: 0,
            next_seq: 0,
            dedup: DedupWindow::new(dedup),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum JoinState {
    Idle,
    Scanning,
    Joining,
    Joined,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Radio {
    Sleep,
    Waking,
    Awake,
}

pub(crate) struct Dev {
    pub name: String,
    pub terminal: Terminal,
    pub battery: bool,
    pub ledger: Option<EnergyLedger>,
    pub report_interval: Option<SimTime>,
    pub poll_interval: Option<SimTime>,
    pub join: JoinState,
    pub addr: Option<u8>,
    pub radio: Radio,
    pub listen_until: SimTime,
    pub listen_gen: u64,
    pub scan_started: SimTime,
    pub wake_started: SimTime,
    pub join_attempts: u32,
    pub join_req_start: Option<SimTime>,
    pub gts_slot: Option<u32>,
    pub gts_slots: u32,
    pub position: Position,
    /// Bumped on eviction so stale periodic timers die.
    pub epoch: u32,
}

pub(crate) struct Coordinator {
    pub registry: NetworkRegistry,
    pub gts: GtsTable,
    pub seq_to: [u8; 256],
    pub beacon_seq: u8,
    pub dev_of_addr: BTreeMap<u8, usize>,
}

pub(crate) struct ClientNode {
    pub core: ClientCore,
    pub secret: String,
    pub nat: NatType,
    pub subscribe: bool,
    pub subscribed: bool,
    pub streams: BTreeMap<u64, GapDetector>,
}

pub(crate) struct CameraNode {
    pub cam: Camera,
    pub secret: String,
    pub nat: NatType,
    pub sinks: BTreeMap<u64, Box<dyn ChunkSink + Send>>,
    /// stream id → (client index, path, stop time)
    pub active: BTreeMap<u64, (usize, PathKind, SimTime)>,
}

pub(crate) struct Party {
    pub session: Option<u64>,
    /// Forced offline by a fault window.
    pub held: bool,
    pub heartbeat_running: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct TxMeta {
    pub frame: Frame,
    pub what: What,
    pub uid: Option<u64>,
    pub start: SimTime,
}

#[derive(Debug, Clone)]
pub(crate) enum Ev {
    Beacon,
    Attempt { node: usize, gen: u64 },
    TxEnd { node: usize, tx: TxId, response: bool },
    AckTimeout { node: usize, gen: u64 },
    Respond { node: usize, frame: Frame, what: What },
    DevStart { dev: usize },
    Rejoin { dev: usize },
    WakeReady { dev: usize },
    ScanTimeout { dev: usize, epoch: u32 },
    JoinTimeout { dev: usize, attempt: u32 },
    Report { dev: usize, epoch: u32 },
    Poll { dev: usize, epoch: u32 },
    ListenEnd { dev: usize, gen: u64 },
    Burst { dev: usize },
    Env { dev: usize, values: BTreeMap<String, i32> },
    Arm { dev: usize, armed: bool },
    Evict { dev: usize },
    RfLoss { p: f64 },
    ToServer { env: WanEnvelope },
    ToParty { to: Principal, env: WanEnvelope },
    Login { who: Principal },
    Logout { who: Principal, hold: bool },
    Heartbeat { who: Principal },
    Sweep,
    ClientCmd { client: usize, target: CmdTarget, msg: DeviceMessage },
    ClientExpire { client: usize },
    GatewayExpire,
    PollFlush { client: usize, interval: SimTime },
    LoadTick { k: usize },
    StreamStart { idx: usize },
    StreamChunk { cam: usize, stream: u64 },
    CamControl { client: usize, cam: usize, action: CameraAction, magnitude: f64 },
    DrainStart,
}

#[derive(Debug, Clone)]
pub(crate) enum CmdTarget {
    Dev(usize),
    Addr(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    Running,
    Draining,
    Finished,
}

pub struct World {
    pub(crate) q: EventQueue<Ev>,
    pub(crate) scenario: Scenario,
    pub(crate) rng: SimRng,
    pub(crate) fault_rng: SimRng,
    pub(crate) sched_rng: SimRng,
    pub(crate) medium: Medium,
    pub(crate) timings: MacTimings,
    pub(crate) mode: MacMode,
    pub(crate) superframe: Superframe,
    pub(crate) rate: f64,
    pub(crate) ack_guard: SimTime,
    pub(crate) net_id: u16,
    pub(crate) coord: Coordinator,
    pub(crate) nodes: Vec<NodeMac>,
    pub(crate) devs: Vec<Dev>,
    pub(crate) kinds: KindRegistry,
    pub(crate) gateway: Gateway,
    pub(crate) server: RendezvousServer,
    pub(crate) parties: BTreeMap<Principal, Party>,
    pub(crate) clients: Vec<ClientNode>,
    pub(crate) cameras: Vec<CameraNode>,
    pub(crate) hop: SimTime,
    pub(crate) trace: Trace,
    pub(crate) end: SimTime,
    pub(crate) hard_end: SimTime,
    pub(crate) phase: RunPhase,
    pub(crate) next_uid: u64,
    pub(crate) tx_meta: HashMap<TxId, TxMeta>,
    pub(crate) panel: Option<Vec<PanelEvent>>,
    pub(crate) gw_origin: BTreeMap<u64, u64>,
    pub(crate) next_gw_cmd: u64,
    pub(crate) next_gw_msg: u64,
    pub(crate) next_cam_msg: u64,
    pub(crate) gw_expiry_at: Option<SimTime>,
    pub(crate) load_targets: Vec<usize>,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let s = scenario.clone();
        let seed = s.seed;
        let timings = s.mac.timings;
        let rate = s.radio.rate_bps;
        let bad = |field: &str, e: String| ScenarioError::Invalid {
            field: field.to_string(),
            message: e,
        };
        let ack_guard = timings.ack_guard(rate).map_err(|e| bad("radio.rate_bps", e.to_string()))?;
        let beacon_guard = timings.beacon_guard(rate).map_err(|e| bad("radio.rate_bps", e.to_string()))?;
        let superframe = Superframe::new(&timings, SimTime::ZERO, beacon_guard);

        let mut medium = Medium::new(s.environment(), SimRng::derive(seed, MEDIUM_STREAM));
        medium.set_guard_horizon(ack_guard + timings.join_latency);
        medium.register(NodeId(0), s.coordinator, s.radio);
        medium.set_listening(NodeId(0), Some(SimTime::ZERO));

        let instances = s.device_instances()?;
        let kinds = s.kind_registry()?;
        let mut nodes = vec![NodeMac::new(timings.dedup_window)];
        let mut devs = Vec::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            let node = i + 1;
            nodes.push(NodeMac::new(timings.dedup_window));
            medium.register(NodeId(node as u32), inst.position, s.radio);
            devs.push(Self::make_dev(&s, inst));
            if !inst.battery {
                medium.set_listening(NodeId(node as u32), Some(SimTime::ZERO));
            }
        }

        let mut registry = NetworkRegistry::new(s.net_id);
        registry.set_permit_join(true);
        let coord = Coordinator {
            registry,
            gts: GtsTable::new(timings.gts_slot_count),
            seq_to: [0; 256],
            beacon_seq: 0,
            dev_of_addr: BTreeMap::new(),
        };

        let gw_cfg = GatewayConfig {
            cmd_timeout: SimTime::from_secs_f64(s.gateway.cmd_timeout_s),
            ..GatewayConfig::default()
        };
        let mut gateway = Gateway::new(&s.gateway.name, gw_cfg, SimRng::derive(seed, GATEWAY_STREAM));
        let mut server = RendezvousServer::new(RendezvousConfig {
            size_threshold: s.rendezvous.size_threshold,
            offline_queue_cap: s.rendezvous.offline_queue_cap,
            punch_model: s.rendezvous.punch_model,
            ..RendezvousConfig::default()
        });
        let mut parties = BTreeMap::new();
        let gw_p = gateway.principal.clone();
        server.register(gw_p.clone(), &s.gateway.secret).map_err(|e| bad("gateway", e.to_string()))?;
        parties.insert(gw_p.clone(), Party::new());

        let mut clients = Vec::new();
        for c in &s.clients {
            gateway.add_user(&c.name, &c.secret, c.role);
            server.register_user(&c.name, &c.secret).map_err(|e| bad("clients", e.to_string()))?;
            let mode = match c.alarm_mode {
                AlarmModeSpec::Named(_) => AlarmMode::Push,
                AlarmModeSpec::Poll { poll_s } => AlarmMode::Poll {
                    interval: SimTime::from_secs_f64(poll_s),
                },
            };
            parties.insert(Principal::user(&c.name), Party::new());
            clients.push(ClientNode {
                core: ClientCore::new(&c.name, gw_p.clone(), mode),
                secret: c.secret.clone(),
                nat: c.nat,
                subscribe: c.subscribe,
                subscribed: false,
                streams: BTreeMap::new(),
            });
        }
        let mut cameras = Vec::new();
        for c in &s.cameras {
            let p = Principal::camera(&c.name);
            server.register(p.clone(), &c.secret).map_err(|e| bad("cameras", e.to_string()))?;
            parties.insert(p, Party::new());
            cameras.push(CameraNode {
                cam: Camera::new(&c.name),
                secret: c.secret.clone(),
                nat: c.nat,
                sinks: BTreeMap::new(),
                active: BTreeMap::new(),
            });
        }

        let end = s.duration();
        let hard_end = end + s.drain();
        let mut w = World {
            q: EventQueue::new(),
            rng: SimRng::derive(seed, MAC_STREAM),
            fault_rng: SimRng::derive(seed, FAULT_STREAM),
            sched_rng: SimRng::derive(seed, SCHEDULE_STREAM),
            medium,
            timings,
            mode: s.mac.mode,
            superframe,
            rate,
            ack_guard,
            net_id: s.net_id,
            coord,
            nodes,
            devs,
            kinds,
            gateway,
            server,
            parties,
            clients,
            cameras,
            hop: SimTime::from_secs_f64(s.rendezvous.hop_latency_ms / 1000.0),
            trace: Trace::new(),
            end,
            hard_end,
            phase: RunPhase::Running,
            next_uid: 0,
            tx_meta: HashMap::new(),
            panel: None,
            gw_origin: BTreeMap::new(),
            next_gw_cmd: 1,
            next_gw_msg: 1,
            next_cam_msg: 1,
            gw_expiry_at: None,
            load_targets: Vec::new(),
            scenario: s,
        };
        w.bootstrap()?;
        Ok(w)
    }

    fn make_dev(s: &Scenario, inst: &DeviceInstance) -> Dev {
        let power = if inst.battery { Power::Battery(s.energy) } else { Power::Mains };
        let descriptor = DeviceDescriptor {
            device_id: inst.device_id,
            name: inst.name.clone(),
            kind: inst.kind.id,
            addr: None,
            sleep_profile: SleepProfile {
                report_interval: inst.report_interval,
                poll_interval: inst.poll_interval,
            },
            power,
        };
        let mut terminal = Terminal::new(descriptor, inst.kind.clone());
        terminal.set_armed(inst.armed);
        Dev {
            name: inst.name.clone(),
            terminal,
            battery: inst.battery,
            ledger: inst.battery.then(|| EnergyLedger::new(s.energy, SimTime::ZERO, RadioState::Sleep)),
            report_interval: inst.report_interval,
            poll_interval: inst.poll_interval,
            join: JoinState::Idle,
            addr: None,
            radio: if inst.battery { Radio::Sleep } else { Radio::Awake },
            listen_until: SimTime::ZERO,
            listen_gen: 0,
            scan_started: SimTime::ZERO,
            wake_started: SimTime::ZERO,
            join_attempts: 0,
            join_req_start: None,
            gts_slot: None,
            gts_slots: inst.gts_slots,
            position: inst.position,
            epoch: 0,
        }
    }

    fn at(&mut self, t: SimTime, ev: Ev) {
        let t = t.max(self.q.now());
        self.q.schedule(t, ev).expect("not in the past");
    }

    fn at_s(&mut self, secs: f64, ev: Ev) {
        self.at(SimTime::from_secs_f64(secs), ev);
    }

    pub(crate) fn emit(&mut self, entity: &str, kind: &str, detail: &[(&str, Value)]) {
        let mut ev = TraceEvent::new(self.q.now(), entity, kind);
        for (k, v) in detail {
            ev.detail.insert((*k).to_string(), v.clone());
        }
        self.trace.push(ev);
    }

    pub(crate) fn panel_push(&mut self, kind: &str, payload: Value) {
        let t = self.q.now();
        if let Some(p) = self.panel.as_mut() {
            p.push(PanelEvent {
                t,
                kind: kind.to_string(),
                payload,
            });
        }
    }

    fn bootstrap(&mut self) -> Result<(), ScenarioError> {
        let s = self.scenario.clone();
        self.emit(
            "sim",
            "sim.start",
            &[
                ("scenario", json!(s.name)),
                ("seed", json!(s.seed)),
                ("mode", json!(s.mac.mode.label())),
                ("devices", json!(self.devs.len())),
            ],
        );
        if self.mode == MacMode::SelfOrganized {
            self.at(SimTime::ZERO, Ev::Beacon);
        }
        for d in 0..self.devs.len() {
            let t = s.device_instances().expect("validated")[d].join_at;
            self.at(t, Ev::DevStart { dev: d });
        }
        let gw = self.gateway.principal.clone();
        self.at(SimTime::ZERO, Ev::Login { who: gw });
        for c in &s.cameras {
            self.at(SimTime::ZERO, Ev::Login { who: Principal::camera(&c.name) });
        }
        for (i, c) in s.clients.iter().enumerate() {
            let _ = i;
            self.at_s(c.login_at_s, Ev::Login { who: Principal::user(&c.name) });
        }
        self.at(SWEEP_PERIOD, Ev::Sweep);
        for w in &s.faults.rf_loss {
            self.at_s(w.from_s, Ev::RfLoss { p: w.p });
            self.at_s(w.to_s, Ev::RfLoss { p: 0.0 });
        }
        for w in &s.faults.offline {
            let who: Principal = w.principal.parse().expect("validated principal");
            self.at_s(w.from_s, Ev::Logout { who: who.clone(), hold: true });
            self.at_s(w.to_s, Ev::Login { who });
        }
        let by_name: BTreeMap<String, usize> = self.devs.iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect();
        let client_idx = |n: &str| s.clients.iter().position(|c| c.name == n).expect("validated client");
        let camera_idx = |n: &str| s.cameras.iter().position(|c| c.name == n).expect("validated camera");
        for (i, c) in s.commands.iter().enumerate() {
            let client = client_idx(&c.client);
            let target = match (&c.device, c.addr) {
                (Some(d), _) => CmdTarget::Dev(by_name[d]),
                (None, Some(a)) => CmdTarget::Addr(a),
                _ => unreachable!("validated"),
            };
            let msg = self.command_message(&target, &c.action).map_err(|message| ScenarioError::Invalid {
                field: format!("commands[{i}]"),
                message,
            })?;
            self.at_s(c.at_s, Ev::ClientCmd { client, target, msg });
        }
        if let Some(l) = &s.command_load {
            self.load_targets = if l.devices.is_empty() {
                self.devs.iter().enumerate().filter(|(_, d)| d.terminal.spec().is_actuator()).map(|(i, _)| i).collect()
            } else {
                l.devices.iter().map(|n| by_name[n]).collect()
            };
            if !self.load_targets.is_empty() {
                self.at_s(l.start_s, Ev::LoadTick { k: 0 });
            }
        }
        for e in &s.env_events {
            self.at_s(
                e.at_s,
                Ev::Env {
                    dev: by_name[&e.device],
                    values: e.values.clone(),
                },
            );
        }
        for e in &s.arm {
            self.at_s(
                e.at_s,
                Ev::Arm {
                    dev: by_name[&e.device],
                    armed: e.armed,
                },
            );
        }
        for e in &s.evictions {
            self.at_s(e.at_s, Ev::Evict { dev: by_name[&e.device] });
        }
        for (idx, st) in s.streams.iter().enumerate() {
            self.at_s(st.at_s, Ev::StreamStart { idx });
        }
        for c in &s.camera_controls {
            self.at_s(
                c.at_s,
                Ev::CamControl {
                    client: client_idx(&c.client),
                    cam: camera_idx(&c.camera),
                    action: c.action,
                    magnitude: c.magnitude_deg,
                },
            );
        }
        if let Some(b) = &s.burst {
            let targets: Vec<usize> = if b.devices.is_empty() {
                (0..self.devs.len()).collect()
            } else {
                b.devices.iter().map(|n| by_name[n]).collect()
            };
            for d in targets {
                let jitter = SimTime::from_secs_f64(self.sched_rng.uniform() * b.jitter_ms / 1000.0);
                self.at(SimTime::from_secs_f64(b.at_s) + jitter, Ev::Burst { dev: d });
            }
        }
        self.at(self.end, Ev::DrainStart);
        Ok(())
    }

    fn command_message(&self, target: &CmdTarget, a: &crate::scenario::ActionSpec) -> Result<DeviceMessage, String> {
        use crate::device::TlvType;
        if a.query.is_some() {
            return Ok(DeviceMessage::new(TlvType::QueryState, Vec::new()));
        }
        if let Some(code) = &a.ir_code {
            return Ok(DeviceMessage::new(TlvType::SetActuator, hex::decode(code).map_err(|e| e.to_string())?));
        }
        let set = a.set.as_ref().ok_or("empty action")?;
        match target {
            CmdTarget::Dev(d) => {
                let t = &self.devs[*d].terminal;
                let value = t.spec().encode_set(t.values(), set).map_err(|e| e.to_string())?;
                Ok(DeviceMessage::new(TlvType::SetActuator, value))
            }
            CmdTarget::Addr(_) => {
                // Raw address: no kind is known, encode as a plug toggle.
                let v = set.values().next().copied().unwrap_or(0);
                Ok(DeviceMessage::new(TlvType::SetActuator, vec![v.clamp(0, 255) as u8]))
            }
        }
    }

    // ---- public surface ----

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn run_phase(&self) -> RunPhase {
        self.phase
    }

    pub fn end_time(&self) -> SimTime {
        self.hard_end
    }

    /// Starts recording panel events (serve mode).
    pub fn enable_panel(&mut self) {
        if self.panel.is_none() {
            self.panel = Some(Vec::new());
        }
    }

    pub fn drain_panel(&mut self) -> Vec<PanelEvent> {
        self.panel.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Processes every event up to `t` (capped at the end of the drain
    /// period). Returns false once the run has finished.
    pub fn run_until(&mut self, t: SimTime) -> bool {
        if self.phase == RunPhase::Finished {
            return false;
        }
        let limit = t.min(self.hard_end);
        while let Some((_, ev)) = self.q.pop_until(limit) {
            self.dispatch(ev);
        }
        self.q.advance_to(limit);
        if limit >= self.hard_end {
            self.finish();
            return false;
        }
        true
    }

    /// Runs the whole scenario and returns its trace.
    pub fn run(mut self) -> Trace {
        self.run_until(self.hard_end);
        self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    fn finish(&mut self) {
        if self.phase == RunPhase::Finished {
            return;
        }
        let now = self.q.now();
        for d in 0..self.devs.len() {
            let dev = &mut self.devs[d];
            let name = dev.name.clone();
            let addr = dev.addr;
            match dev.ledger.as_mut() {
                Some(l) => {
                    l.settle(now);
                    let p = *l.params();
                    let detail = [
                        ("addr", json!(addr)),
                        ("power", json!("battery")),
                        ("elapsed_us", json!(now.as_micros())),
                        ("sleep_us", json!(l.time_in(RadioState::Sleep, now).as_micros())),
                        ("rx_us", json!(l.time_in(RadioState::RxListen, now).as_micros())),
                        ("tx_us", json!(l.time_in(RadioState::Tx, now).as_micros())),
                        ("sleep_ma", json!(p.sleep_current_ma)),
                        ("rx_ma", json!(p.rx_current_ma)),
                        ("tx_ma", json!(p.tx_current_ma)),
                        ("capacity_mah", json!(p.battery_capacity_mah)),
                    ];
                    self.emit(&name, "energy.summary", &detail);
                }
                None => {
                    self.emit(&name, "energy.summary", &[("addr", json!(addr)), ("power", json!("mains"))]);
                }
            }
        }
        let c = self.server.counters();
        self.pull_server_events();
        self.emit(
            "server",
            "server.counters",
            &[
                ("relayed_envelopes", json!(c.relayed_envelopes)),
                ("relay_payload_bytes", json!(c.relay_payload_bytes)),
                ("setup_bytes", json!(c.setup_bytes)),
                ("dropped_sessions", json!(c.dropped_sessions)),
                ("dropped_messages", json!(c.dropped_messages)),
                ("duplicates", json!(c.duplicates)),
                ("peak_sessions", json!(c.peak_sessions)),
            ],
        );
        self.emit("sim", "sim.end", &[("events", json!(self.q.fired()))]);
        self.phase = RunPhase::Finished;
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Beacon => self.on_beacon(),
            Ev::Attempt { node, gen } => self.on_attempt(node, gen),
            Ev::TxEnd { node, tx, response } => self.on_tx_end(node, tx, response),
            Ev::AckTimeout { node, gen } => self.on_ack_timeout(node, gen),
            Ev::Respond { node, frame, what } => self.on_respond(node, frame, what),
            Ev::DevStart { dev } => self.on_dev_start(dev),
            Ev::Rejoin { dev } => self.on_rejoin(dev),
            Ev::WakeReady { dev } => self.on_wake_ready(dev),
            Ev::ScanTimeout { dev, epoch } => self.on_scan_timeout(dev, epoch),
            Ev::JoinTimeout { dev, attempt } => self.on_join_timeout(dev, attempt),
            Ev::Report { dev, epoch } => self.on_report_timer(dev, epoch),
            Ev::Poll { dev, epoch } => self.on_poll_timer(dev, epoch),
            Ev::ListenEnd { dev, gen } => {
                if self.devs[dev].listen_gen == gen {
                    self.maybe_sleep(dev);
                }
            }
            Ev::Burst { dev } => self.on_burst(dev),
            Ev::Env { dev, values } => self.on_env(dev, values),
            Ev::Arm { dev, armed } => {
                self.devs[dev].terminal.set_armed(armed);
                let name = self.devs[dev].name.clone();
                self.emit(&name, "dev.arm", &[("armed", json!(armed))]);
            }
            Ev::Evict { dev } => self.on_evict(dev),
            Ev::RfLoss { p } => {
                self.medium.set_bit_error_probability(p);
                self.emit("rf", "fault.rf_loss", &[("p", json!(p))]);
            }
            Ev::ToServer { env } => self.on_to_server(env),
            Ev::ToParty { to, env } => self.on_to_party(to, env),
            Ev::Login { who } => self.on_login(who),
            Ev::Logout { who, hold } => self.on_logout(who, hold),
            Ev::Heartbeat { who } => self.on_heartbeat(who),
            Ev::Sweep => self.on_sweep(),
            Ev::ClientCmd { client, target, msg } => {
                let addr = match target {
                    CmdTarget::Dev(d) => self.devs[d].addr.unwrap_or(0xFF),
                    CmdTarget::Addr(a) => a,
                };
                let _ = self.issue_command(client, addr, &msg);
            }
            Ev::ClientExpire { client } => self.on_client_expire(client),
            Ev::GatewayExpire => self.on_gateway_expire(),
            Ev::PollFlush { client, interval } => self.on_poll_flush(client, interval),
            Ev::LoadTick { k } => self.on_load_tick(k),
            Ev::StreamStart { idx } => self.on_stream_start(idx),
            Ev::StreamChunk { cam, stream } => self.on_stream_chunk(cam, stream),
            Ev::CamControl {
                client,
                cam,
                action,
                magnitude,
            } => {
                let _ = self.camera_control(client, cam, action, magnitude);
            }
            Ev::DrainStart => self.on_drain_start(),
        }
    }

    fn on_drain_start(&mut self) {
        self.phase = RunPhase::Draining;
        self.emit("sim", "sim.drain", &[]);
        for c in 0..self.clients.len() {
            if let AlarmMode::Poll { .. } = self.clients[c].core.mode {
                self.flush_alarms(c);
            }
        }
    }

    fn on_load_tick(&mut self, k: usize) {
        if self.phase != RunPhase::Running || self.load_targets.is_empty() {
            return;
        }
        let l = self.scenario.command_load.clone().expect("load configured");
        if l.stop_s.is_some_and(|s| self.now() > SimTime::from_secs_f64(s)) {
            return;
        }
        let d = self.load_targets[k % self.load_targets.len()];
        let client = self.scenario.clients.iter().position(|c| c.name == l.client).expect("validated");
        let msg = self.toggle_message(d, k / self.load_targets.len());
        if let Some(addr) = self.devs[d].addr {
            let _ = self.issue_command(client, addr, &msg);
        }
        self.q.schedule_in(SimTime::from_secs_f64(l.every_s), Ev::LoadTick { k: k + 1 });
    }

    /// Alternates an actuator between the extremes of its first settable
    /// field; opaque-command kinds get a fixed code.
    fn toggle_message(&self, d: usize, round: usize) -> DeviceMessage {
        use crate::device::TlvType;
        let spec = self.devs[d].terminal.spec();
        if spec.opaque_command.is_some() {
            return DeviceMessage::new(TlvType::SetActuator, vec![0x20, 0xDF, 0x10, 0xEF]);
        }
        let field = &spec.settable[0];
        let f = &spec.fields[spec.field_index(field).expect("validated")];
        let v = if round % 2 == 0 { f.max } else { f.min };
        let mut changes = BTreeMap::new();
        changes.insert(field.clone(), v);
        let value = spec.encode_set(self.devs[d].terminal.values(), &changes).expect("in-range toggle");
        DeviceMessage::new(TlvType::SetActuator, value)
    }

    // ---- views used by the CLI and serve mode ----

    pub fn devices(&self) -> Vec<DeviceView> {
        let now = self.now();
        self.devs
            .iter()
            .map(|d| {
                let spec = d.terminal.spec();
                DeviceView {
                    name: d.name.clone(),
                    addr: d.addr,
                    kind: spec.name.clone(),
                    kind_id: spec.id,
                    power: if d.battery { "battery".into() } else { "mains".into() },
                    battery_pct: d.ledger.as_ref().map(|l| {
                        let mut l = l.clone();
                        l.settle(now);
                        (l.remaining_fraction(now) * 1000.0).round() / 10.0
                    }),
                    joined: d.join == JoinState::Joined,
                    state: d.terminal.state_map(),
                    settable: spec.settable.clone(),
                    armed: d.terminal.armed(),
                    x: d.position.x,
                    y: d.position.y,
                }
            })
            .collect()
    }

    pub fn device_by_addr(&self, addr: u8) -> Option<DeviceView> {
        self.devices().into_iter().find(|d| d.addr == Some(addr))
    }

    pub fn client_index(&self, name: &str) -> Option<usize> {
        self.clients.iter().position(|c| c.core.principal == Principal::user(name))
    }

    pub fn camera_index(&self, name: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.cam.name == name)
    }

    pub fn client(&self, idx: usize) -> &ClientCore {
        &self.clients[idx].core
    }

    pub fn camera(&self, idx: usize) -> &Camera {
        &self.cameras[idx].cam
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn server(&self) -> &RendezvousServer {
        &self.server
    }

    pub fn registry(&self) -> &NetworkRegistry {
        &self.coord.registry
    }

    pub fn router_config(&self) -> RouterConfig {
        self.gateway.admin_get()
    }

    /// Applies an admin change on behalf of client `idx` (role checked).
    pub fn admin_set(&mut self, idx: usize, key: &str, value: &Value) -> Result<RouterConfig, GatewayError> {
        let now = self.now();
        let who = self.clients[idx].core.principal.clone();
        let role = self.gateway.session_for(&who, now).map(|s| s.role).ok_or(GatewayError::AuthFailed { hint: None })?;
        let r = self.gateway.admin_set(role, key, value);
        let ok = r.is_ok();
        self.emit("gateway", "gw.admin_set", &[("client", json!(who.to_string())), ("key", json!(key)), ("ok", json!(ok))]);
        r
    }

    pub fn alarms_page(&self, offset: usize, limit: usize) -> (usize, Vec<AlarmRecord>) {
        (self.gateway.alarms.total(), self.gateway.alarms.page(offset, limit))
    }

    pub fn acknowledge_alarm(&mut self, alarm_id: u64) -> bool {
        let ok = self.gateway.alarms.acknowledge(alarm_id);
        if ok {
            self.emit("gateway", "alarm.ack", &[("alarm_id", json!(alarm_id))]);
            self.panel_push("ALARM_ACK", json!({ "alarm_id": alarm_id }));
        }
        ok
    }

    /// Issues a command now on behalf of client `idx`; the result arrives
    /// later as a `cmd.done` trace event and a `CMD_ACK` panel event.
    pub fn submit_command(&mut self, idx: usize, addr: u8, msg: &DeviceMessage) -> Result<u64, ClientError> {
        self.issue_command(idx, addr, msg)
    }

    /// Encodes `action` for whatever device currently holds `addr`.
    pub fn action_message(&self, addr: u8, action: &crate::scenario::ActionSpec) -> Result<DeviceMessage, String> {
        let target = match self.devs.iter().position(|d| d.addr == Some(addr)) {
            Some(d) => CmdTarget::Dev(d),
            None => CmdTarget::Addr(addr),
        };
        self.command_message(&target, action)
    }

    pub fn submit_camera_control(&mut self, idx: usize, cam: usize, action: CameraAction, magnitude: f64) -> Result<u64, ClientError> {
        self.camera_control(idx, cam, action, magnitude)
    }

    /// Starts a stream outside the scripted schedule (serve mode).
    pub fn submit_stream(&mut self, idx: usize, cam: usize, quality: Quality, duration: SimTime) -> Option<u64> {
        self.start_stream(idx, cam, quality, duration, None)
    }

    /// Chunk sink attached to a stream (for tests and the CLI).
    pub fn attach_sink(&mut self, cam: usize, stream: u64, sink: Box<dyn ChunkSink + Send>) {
        self.cameras[cam].sinks.insert(stream, sink);
    }

    pub fn take_sink(&mut self, cam: usize, stream: u64) -> Option<Box<dyn ChunkSink + Send>> {
        self.cameras[cam].sinks.remove(&stream)
    }

    /// Moves the gateway command expiry timer to the earliest deadline.
    pub(crate) fn arm_gateway_expiry(&mut self) {
        if let Some(t) = self.gateway.commands.next_deadline() {
            if self.gw_expiry_at.is_none_or(|cur| t < cur || cur < self.now()) {
                self.gw_expiry_at = Some(t);
                self.at(t, Ev::GatewayExpire);
            }
        }
    }
}

impl Party {
    fn new() -> Self {
        Party {
            session: None,
            held: false,
            heartbeat_running: false,
        }
    }
}


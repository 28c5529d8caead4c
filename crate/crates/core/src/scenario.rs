//! Scenario files: the JSON document that fully specifies one simulation run.
//!
//! Parsing happens in two passes. Serde (through `serde_path_to_error`)
//! catches syntax and type errors and reports the JSON path plus line and
//! column; [`Scenario::validate`] then checks cross references, ranges and
//! timings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraAction, Quality};
use crate::device::{KindRegistry, KindSpec};
use crate::mac::EnergyParams;
use crate::gateway::Role;
use crate::mac::{MacMode, MacTimings};
use crate::rendezvous::{NatType, PunchModel};
use crate::rf::{Environment, EnvironmentKind, Position, RadioProfile};
use crate::sim::{SimRng, SimTime};

pub const SCHEMA_VERSION: u32 = 1;

/// Hard ceiling on expanded device instances per scenario.
pub const MAX_DEVICES: usize = 1024;

const PLACEMENT_STREAM: u64 = 0x706c_6163;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub kind: EnvironmentKind,
    /// Overrides the calibrated exponent.
    #[serde(default)]
    pub path_loss_exponent: Option<f64>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec {
            kind: EnvironmentKind::Indoor,
            path_loss_exponent: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacSpec {
    #[serde(default = "default_mode")]
    pub mode: MacMode,
    /// All durations in microseconds.
    #[serde(default)]
    pub timings: MacTimings,
}

fn default_mode() -> MacMode {
    MacMode::SelfOrganized
}

impl Default for MacSpec {
    fn default() -> Self {
        MacSpec {
            mode: MacMode::SelfOrganized,
            timings: MacTimings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    /// Scan for beacons, then JOIN_REQ/JOIN_ACK over the air.
    #[default]
    OverAir,
    /// Addresses assigned before the run; no join traffic.
    Preprovisioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerSpec {
    Mains,
    Battery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceGroup {
    pub name: String,
    pub kind: String,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    /// Random placement within this radius of the coordinator when `x`/`y`
    /// are absent.
    #[serde(default)]
    pub radius_m: Option<f64>,
    /// Defaults to the kind's own power source.
    #[serde(default)]
    pub power: Option<PowerSpec>,
    #[serde(default)]
    pub report_interval_s: Option<f64>,
    #[serde(default)]
    pub poll_interval_s: Option<f64>,
    /// Join start; default is a seeded draw over `join_spread_s`.
    #[serde(default)]
    pub join_at_s: Option<f64>,
    #[serde(default)]
    pub gts_slots: u32,
    #[serde(default)]
    pub armed: bool,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    #[serde(default = "default_gateway_name")]
    pub name: String,
    #[serde(default = "default_gateway_secret")]
    pub secret: String,
    #[serde(default = "default_gateway_nat")]
    pub nat: NatType,
    #[serde(default = "default_cmd_timeout")]
    pub cmd_timeout_s: f64,
}

fn default_gateway_name() -> String {
    "home".into()
}
fn default_gateway_secret() -> String {
    "gateway-secret".into()
}
fn default_gateway_nat() -> NatType {
    NatType::PortRestricted
}
fn default_cmd_timeout() -> f64 {
    5.0
}

impl Default for GatewaySpec {
    fn default() -> Self {
        GatewaySpec {
            name: default_gateway_name(),
            secret: default_gateway_secret(),
            nat: default_gateway_nat(),
            cmd_timeout_s: default_cmd_timeout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RendezvousSpec {
    #[serde(default = "default_threshold")]
    pub size_threshold: usize,
    #[serde(default = "default_queue_cap")]
    pub offline_queue_cap: usize,
    #[serde(default)]
    pub punch_model: PunchModel,
    /// One-way latency of each WAN hop (party to server or server to party).
    #[serde(default = "default_hop")]
    pub hop_latency_ms: f64,
}

fn default_threshold() -> usize {
    crate::rendezvous::DEFAULT_SIZE_THRESHOLD
}
fn default_queue_cap() -> usize {
    crate::rendezvous::DEFAULT_OFFLINE_QUEUE_CAP
}
fn default_hop() -> f64 {
    40.0
}

impl Default for RendezvousSpec {
    fn default() -> Self {
        RendezvousSpec {
            size_threshold: default_threshold(),
            offline_queue_cap: default_queue_cap(),
            punch_model: PunchModel::default(),
            hop_latency_ms: default_hop(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum AlarmModeSpec {
    Named(AlarmModeName),
    Poll { poll_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmModeName {
    Push,
}

impl Default for AlarmModeSpec {
    fn default() -> Self {
        AlarmModeSpec::Named(AlarmModeName::Push)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub name: String,
    #[serde(default = "default_client_secret")]
    pub secret: String,
    #[serde(default = "default_role")]
    pub role: Role,
    #[serde(default = "default_client_nat")]
    pub nat: NatType,
    #[serde(default)]
    pub alarm_mode: AlarmModeSpec,
    #[serde(default = "yes")]
    pub subscribe: bool,
    #[serde(default)]
    pub login_at_s: f64,
}

fn default_client_secret() -> String {
    "secret".into()
}
fn default_role() -> Role {
    Role::User
}
fn default_client_nat() -> NatType {
    NatType::FullCone
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: String,
    #[serde(default = "default_camera_nat")]
    pub nat: NatType,
    #[serde(default = "default_camera_secret")]
    pub secret: String,
}

fn default_camera_nat() -> NatType {
    NatType::Open
}
fn default_camera_secret() -> String {
    "camera-secret".into()
}

/// What a scheduled command does. Exactly one of the fields is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    #[serde(default)]
    pub set: Option<BTreeMap<String, i32>>,
    #[serde(default)]
    pub query: Option<bool>,
    /// Hex-encoded opaque code for kinds such as the IR blaster.
    #[serde(default)]
    pub ir_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub at_s: f64,
    pub client: String,
    /// Target device instance name; `addr` addresses a raw slot instead.
    #[serde(default)]
    pub device: Option<String>,
    #[serde(default)]
    pub addr: Option<u8>,
    #[serde(flatten)]
    pub action: ActionSpec,
}

/// Periodic toggles round-robin over actuators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandLoad {
    pub client: String,
    #[serde(default = "default_load_start")]
    pub start_s: f64,
    pub every_s: f64,
    #[serde(default)]
    pub stop_s: Option<f64>,
    /// Device instance names; empty means every actuator.
    #[serde(default)]
    pub devices: Vec<String>,
}

fn default_load_start() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvEvent {
    pub at_s: f64,
    pub device: String,
    pub values: BTreeMap<String, i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmEvent {
    pub at_s: f64,
    pub device: String,
    pub armed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkSpec {
    Memory,
    File(String),
    FailingAfter(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub at_s: f64,
    pub client: String,
    pub camera: String,
    pub quality: Quality,
    pub duration_s: f64,
    #[serde(default)]
    pub sink: Option<SinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraControlSpec {
    pub at_s: f64,
    pub client: String,
    pub camera: String,
    pub action: CameraAction,
    pub magnitude_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvictSpec {
    pub at_s: f64,
    pub device: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfLossWindow {
    pub from_s: f64,
    pub to_s: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WanLossWindow {
    /// Party whose link to the server is lossy (client, camera or gateway
    /// name as `user:x`, `camera:x`, `gateway:x`).
    pub principal: String,
    pub from_s: f64,
    pub to_s: f64,
    #[serde(default = "full")]
    pub p: f64,
}

fn full() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineWindow {
    pub principal: String,
    pub from_s: f64,
    pub to_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Faults {
    #[serde(default)]
    pub rf_loss: Vec<RfLossWindow>,
    /// Probability that a sender misses an ACK that did arrive, forcing a
    /// retransmission the receiver sees as a duplicate.
    #[serde(default)]
    pub ack_loss_p: f64,
    #[serde(default)]
    pub wan_loss: Vec<WanLossWindow>,
    /// Probability that an envelope is delivered to the server twice.
    #[serde(default)]
    pub wan_duplicate_p: f64,
    /// Probability that a CMD envelope is altered in transit.
    #[serde(default)]
    pub tamper_p: f64,
    #[serde(default)]
    pub offline: Vec<OfflineWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub at_s: f64,
    #[serde(default = "default_jitter")]
    pub jitter_ms: f64,
    /// Device instance names; empty means every device.
    #[serde(default)]
    pub devices: Vec<String>,
}

fn default_jitter() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// Quiet period after `duration_s` in which no new traffic is generated
    /// but in-flight work settles.
    #[serde(default = "default_drain")]
    pub drain_s: f64,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub radio: RadioProfile,
    #[serde(default)]
    pub mac: MacSpec,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default = "default_net_id")]
    pub net_id: u16,
    #[serde(default)]
    pub join: JoinMode,
    #[serde(default = "default_join_spread")]
    pub join_spread_s: f64,
    #[serde(default)]
    pub coordinator: Position,
    #[serde(default)]
    pub kinds: Vec<KindSpec>,
    #[serde(default)]
    pub devices: Vec<DeviceGroup>,
    #[serde(default)]
    pub gateway: GatewaySpec,
    #[serde(default)]
    pub rendezvous: RendezvousSpec,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub commands: Vec<CommandSpec>,
    #[serde(default)]
    pub command_load: Option<CommandLoad>,
    #[serde(default)]
    pub env_events: Vec<EnvEvent>,
    #[serde(default)]
    pub arm: Vec<ArmEvent>,
    #[serde(default)]
    pub streams: Vec<StreamSpec>,
    #[serde(default)]
    pub camera_controls: Vec<CameraControlSpec>,
    #[serde(default)]
    pub evictions: Vec<EvictSpec>,
    #[serde(default)]
    pub faults: Faults,
    #[serde(default)]
    pub burst: Option<Burst>,
}

fn default_drain() -> f64 {
    8.0
}
fn default_net_id() -> u16 {
    1
}
fn default_join_spread() -> f64 {
    2.0
}

/// One placed device after group expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceInstance {
    pub name: String,
    pub device_id: u64,
    pub kind: KindSpec,
    pub position: Position,
    pub battery: bool,
    pub report_interval: Option<SimTime>,
    pub poll_interval: Option<SimTime>,
    pub join_at: SimTime,
    pub gts_slots: u32,
    pub armed: bool,
}

pub const DEVICE_ID_BASE: u64 = 0x4845_0000_0000;

/// Default report period for sensors when the scenario gives none.
pub const DEFAULT_REPORT_INTERVAL_S: f64 = 10.0;

const DEFAULT_RADIUS_M: f64 = 20.0;

impl Scenario {
    /// A minimal valid scenario, convenient for building others in code.
    pub fn empty(name: &str, duration_s: f64) -> Self {
        serde_json::from_value(serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "name": name,
            "duration_s": duration_s,
        }))
        .expect("minimal scenario parses")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let (line, column) = (inner.line(), inner.column());
            let full = inner.to_string();
            let suffix = format!(" at line {line} column {column}");
            ScenarioError::Parse {
                path: if path.is_empty() || path == "?" { ".".into() } else { path },
                line,
                column,
                message: full.strip_suffix(&suffix).unwrap_or(&full).to_string(),
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn drain(&self) -> SimTime {
        SimTime::from_secs_f64(self.drain_s)
    }

    pub fn environment(&self) -> Environment {
        let mut env = Environment::calibrated(self.environment.kind, &self.radio);
        if let Some(n) = self.environment.path_loss_exponent {
            env.path_loss_exponent = n;
        }
        env
    }

    pub fn kind_registry(&self) -> Result<KindRegistry, ScenarioError> {
        let mut reg = KindRegistry::new();
        for (i, k) in self.kinds.iter().enumerate() {
            reg.register_device_kind(k.clone()).map_err(|e| invalid(format!("kinds[{i}]"), e.to_string()))?;
        }
        Ok(reg)
    }

    /// Expands device groups into placed instances. Placement and default
    /// join times are drawn from a stream derived from the seed.
    pub fn device_instances(&self) -> Result<Vec<DeviceInstance>, ScenarioError> {
        let reg = self.kind_registry()?;
        let mut rng = SimRng::derive(self.seed, PLACEMENT_STREAM);
        let mut out = Vec::new();
        for (gi, g) in self.devices.iter().enumerate() {
            let field = |f: &str| format!("devices[{gi}].{f}");
            let kind = reg.resolve(&g.kind).map_err(|e| invalid(field("kind"), e.to_string()))?.clone();
            if !kind.on_rf {
                return Err(invalid(field("kind"), format!("`{}` is not an RF device; list it under cameras", kind.name)));
            }
            let battery = match g.power {
                Some(PowerSpec::Battery) => true,
                Some(PowerSpec::Mains) => false,
                None => !kind.mains_powered,
            };
            let report = g.report_interval_s.or((!kind.is_actuator() || battery).then_some(DEFAULT_REPORT_INTERVAL_S));
            for i in 0..g.count {
                let name = if g.count == 1 { g.name.clone() } else { format!("{}-{}", g.name, i + 1) };
                let position = match (g.x, g.y) {
                    (Some(x), Some(y)) => Position::new(x, y),
                    _ => {
                        let r = g.radius_m.unwrap_or(DEFAULT_RADIUS_M) * rng.uniform().sqrt();
                        let a = rng.uniform() * std::f64::consts::TAU;
                        Position::new(self.coordinator.x + r * a.cos(), self.coordinator.y + r * a.sin())
                    }
                };
                let join_at = match g.join_at_s {
                    Some(s) => SimTime::from_secs_f64(s),
                    None => SimTime::from_secs_f64(rng.uniform() * self.join_spread_s),
                };
                out.push(DeviceInstance {
                    name,
                    device_id: DEVICE_ID_BASE + out.len() as u64,
                    kind: kind.clone(),
                    position,
                    battery,
                    report_interval: report.map(SimTime::from_secs_f64),
                    poll_interval: g.poll_interval_s.map(SimTime::from_secs_f64),
                    join_at,
                    gts_slots: g.gts_slots,
                    armed: g.armed,
                });
            }
        }
        Ok(out)
    }

    fn instance_names(&self) -> Result<BTreeMap<String, String>, ScenarioError> {
        // instance name → kind name
        let mut names = BTreeMap::new();
        for (gi, g) in self.devices.iter().enumerate() {
            for i in 0..g.count {
                let name = if g.count == 1 { g.name.clone() } else { format!("{}-{}", g.name, i + 1) };
                if names.insert(name.clone(), g.kind.clone()).is_some() {
                    return Err(invalid(format!("devices[{gi}].name"), format!("duplicate device name `{name}`")));
                }
            }
        }
        Ok(names)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(invalid("duration_s", "must be a positive number of seconds"));
        }
        if !(self.drain_s >= 0.0) {
            return Err(invalid("drain_s", "must be non-negative"));
        }
        self.radio.validate().map_err(|e| invalid("radio", e.to_string()))?;
        self.mac
            .timings
            .validate_for_rate(self.radio.rate_bps)
            .map_err(|e| invalid("mac.timings", e.to_string()))?;
        if let Some(n) = self.environment.path_loss_exponent {
            if !(n > 0.0) {
                return Err(invalid("environment.path_loss_exponent", "must be positive"));
            }
        }
        if !(self.join_spread_s >= 0.0) {
            return Err(invalid("join_spread_s", "must be non-negative"));
        }
        if !(self.gateway.cmd_timeout_s > 0.0) {
            return Err(invalid("gateway.cmd_timeout_s", "must be positive"));
        }
        if !(self.rendezvous.hop_latency_ms >= 0.0) {
            return Err(invalid("rendezvous.hop_latency_ms", "must be non-negative"));
        }
        let instances = self.device_instances()?;
        if instances.len() > MAX_DEVICES {
            return Err(invalid("devices", format!("{} devices exceeds the limit of {MAX_DEVICES}", instances.len())));
        }
        let names = self.instance_names()?;
        let reg = self.kind_registry()?;
        for (gi, g) in self.devices.iter().enumerate() {
            let f = |k: &str| format!("devices[{gi}].{k}");
            if g.count == 0 {
                return Err(invalid(f("count"), "must be at least 1"));
            }
            if g.x.is_some() != g.y.is_some() {
                return Err(invalid(f("x"), "x and y must be given together"));
            }
            for (k, v) in [("report_interval_s", g.report_interval_s), ("poll_interval_s", g.poll_interval_s)] {
                if let Some(v) = v {
                    if !(v > 0.0) {
                        return Err(invalid(f(k), "must be positive"));
                    }
                }
            }
            if g.gts_slots > self.mac.timings.gts_slot_count {
                return Err(invalid(f("gts_slots"), format!("at most {} guaranteed slots exist", self.mac.timings.gts_slot_count)));
            }
        }
        let gts_total: u32 = instances.iter().map(|d| d.gts_slots).sum();
        if gts_total > self.mac.timings.gts_slot_count {
            return Err(invalid("devices", format!("{gts_total} GTS slots requested, {} available", self.mac.timings.gts_slot_count)));
        }

        let mut clients = BTreeSet::new();
        for (i, c) in self.clients.iter().enumerate() {
            if c.name.is_empty() || !clients.insert(c.name.clone()) {
                return Err(invalid(format!("clients[{i}].name"), format!("missing or duplicate client `{}`", c.name)));
            }
            if let AlarmModeSpec::Poll { poll_s } = c.alarm_mode {
                if !(poll_s > 0.0) {
                    return Err(invalid(format!("clients[{i}].alarm_mode.poll_s"), "must be positive"));
                }
            }
        }
        let mut cameras = BTreeSet::new();
        for (i, c) in self.cameras.iter().enumerate() {
            if c.name.is_empty() || !cameras.insert(c.name.clone()) {
                return Err(invalid(format!("cameras[{i}].name"), format!("missing or duplicate camera `{}`", c.name)));
            }
        }
        let time = |field: String, t: f64| -> Result<(), ScenarioError> {
            if !(t >= 0.0) || t > self.duration_s {
                return Err(invalid(field, format!("time {t} outside 0..={}", self.duration_s)));
            }
            Ok(())
        };
        let client = |field: String, name: &str| -> Result<(), ScenarioError> {
            if !clients.contains(name) {
                return Err(invalid(field, format!("unknown client `{name}`")));
            }
            Ok(())
        };
        let device = |field: String, name: &str| -> Result<&String, ScenarioError> {
            names.get(name).ok_or_else(|| invalid(field, format!("unknown device `{name}`")))
        };
        let camera = |field: String, name: &str| -> Result<(), ScenarioError> {
            if !cameras.contains(name) {
                return Err(invalid(field, format!("unknown camera `{name}`")));
            }
            Ok(())
        };

        for (i, c) in self.commands.iter().enumerate() {
            let f = |k: &str| format!("commands[{i}].{k}");
            time(f("at_s"), c.at_s)?;
            client(f("client"), &c.client)?;
            match (&c.device, c.addr) {
                (Some(d), None) => {
                    device(f("device"), d)?;
                }
                (None, Some(_)) => {}
                _ => return Err(invalid(f("device"), "give exactly one of `device` or `addr`")),
            }
            let a = &c.action;
            let n = a.set.is_some() as u8 + a.query.is_some() as u8 + a.ir_code.is_some() as u8;
            if n != 1 {
                return Err(invalid(f("set"), "give exactly one of `set`, `query` or `ir_code`"));
            }
            if let Some(code) = &a.ir_code {
                hex::decode(code).map_err(|e| invalid(f("ir_code"), e.to_string()))?;
            }
        }
        if let Some(l) = &self.command_load {
            client("command_load.client".into(), &l.client)?;
            if !(l.every_s > 0.0) {
                return Err(invalid("command_load.every_s", "must be positive"));
            }
            time("command_load.start_s".into(), l.start_s)?;
            for (i, d) in l.devices.iter().enumerate() {
                let kind = device(format!("command_load.devices[{i}]"), d)?;
                if !reg.by_name(kind).is_some_and(KindSpec::is_actuator) {
                    return Err(invalid(format!("command_load.devices[{i}]"), format!("`{d}` is not an actuator")));
                }
            }
        }
        for (i, e) in self.env_events.iter().enumerate() {
            time(format!("env_events[{i}].at_s"), e.at_s)?;
            device(format!("env_events[{i}].device"), &e.device)?;
        }
        for (i, e) in self.arm.iter().enumerate() {
            time(format!("arm[{i}].at_s"), e.at_s)?;
            device(format!("arm[{i}].device"), &e.device)?;
        }
        for (i, e) in self.evictions.iter().enumerate() {
            time(format!("evictions[{i}].at_s"), e.at_s)?;
            device(format!("evictions[{i}].device"), &e.device)?;
        }
        for (i, s) in self.streams.iter().enumerate() {
            time(format!("streams[{i}].at_s"), s.at_s)?;
            client(format!("streams[{i}].client"), &s.client)?;
            camera(format!("streams[{i}].camera"), &s.camera)?;
            if !(s.duration_s > 0.0) {
                return Err(invalid(format!("streams[{i}].duration_s"), "must be positive"));
            }
        }
        for (i, c) in self.camera_controls.iter().enumerate() {
            time(format!("camera_controls[{i}].at_s"), c.at_s)?;
            client(format!("camera_controls[{i}].client"), &c.client)?;
            camera(format!("camera_controls[{i}].camera"), &c.camera)?;
        }
        for (i, w) in self.faults.rf_loss.iter().enumerate() {
            if !(0.0..=1.0).contains(&w.p) || !(w.from_s <= w.to_s) {
                return Err(invalid(format!("faults.rf_loss[{i}]"), "need 0 <= p <= 1 and from_s <= to_s"));
            }
        }
        for (k, p) in [
            ("faults.ack_loss_p", self.faults.ack_loss_p),
            ("faults.wan_duplicate_p", self.faults.wan_duplicate_p),
            ("faults.tamper_p", self.faults.tamper_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(k, "probability must lie in 0..=1"));
            }
        }
        let principals: BTreeSet<String> = self
            .clients
            .iter()
            .map(|c| format!("user:{}", c.name))
            .chain(self.cameras.iter().map(|c| format!("camera:{}", c.name)))
            .chain(std::iter::once(format!("gateway:{}", self.gateway.name)))
            .collect();
        for (i, w) in self.faults.wan_loss.iter().enumerate() {
            if !principals.contains(&w.principal) {
                return Err(invalid(format!("faults.wan_loss[{i}].principal"), format!("unknown principal `{}`", w.principal)));
            }
            if !(0.0..=1.0).contains(&w.p) || !(w.from_s <= w.to_s) {
                return Err(invalid(format!("faults.wan_loss[{i}]"), "need 0 <= p <= 1 and from_s <= to_s"));
            }
        }
        for (i, w) in self.faults.offline.iter().enumerate() {
            if !principals.contains(&w.principal) {
                return Err(invalid(format!("faults.offline[{i}].principal"), format!("unknown principal `{}`", w.principal)));
            }
            if !(w.from_s <= w.to_s) {
                return Err(invalid(format!("faults.offline[{i}]"), "from_s must not exceed to_s"));
            }
        }
        if let Some(b) = &self.burst {
            time("burst.at_s".into(), b.at_s)?;
            if !(b.jitter_ms >= 0.0) {
                return Err(invalid("burst.jitter_ms", "must be non-negative"));
            }
            for (i, d) in b.devices.iter().enumerate() {
                device(format!("burst.devices[{i}]"), d)?;
            }
        }
        Ok(())
    }
}

/// Scenarios shipped with the library, by file name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("nominal_100dev.json", include_str!("../scenarios/nominal_100dev.json")),
    ("capacity_255.json", include_str!("../scenarios/capacity_255.json")),
    ("burst_4.json", include_str!("../scenarios/burst_4.json")),
    ("burst_100.json", include_str!("../scenarios/burst_100.json")),
    ("single_sender.json", include_str!("../scenarios/single_sender.json")),
    ("alarms.json", include_str!("../scenarios/alarms.json")),
    ("sleepy_actuator.json", include_str!("../scenarios/sleepy_actuator.json")),
    ("camera_open.json", include_str!("../scenarios/camera_open.json")),
    ("camera_symmetric.json", include_str!("../scenarios/camera_symmetric.json")),
    ("lossy_home.json", include_str!("../scenarios/lossy_home.json")),
    ("demo_home.json", include_str!("../scenarios/demo_home.json")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name || n.trim_end_matches(".json") == name)
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenarios are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_scenario_validates() {
        for (name, text) in BUNDLED {
            Scenario::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let err = Scenario::from_json("{\n  \"schema_version\": 1,\n  \"duration_s\": ,\n}").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_error_reports_field_path() {
        let err = Scenario::from_json(r#"{"schema_version":1,"duration_s":5,"devices":[{"name":"a","kind":"plug","count":"two"}]}"#)
            .unwrap_err();
        match err {
            ScenarioError::Parse { path, .. } => assert_eq!(path, "devices[0].count"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = Scenario::from_json(r#"{"schema_version":1,"duration_s":5,"sed":3}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }), "{err:?}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad_kind = r#"{"schema_version":1,"duration_s":5,"devices":[{"name":"a","kind":"toaster"}]}"#;
        assert!(matches!(Scenario::from_json(bad_kind), Err(ScenarioError::Invalid { field, .. }) if field == "devices[0].kind"));
        let bad_ref = r#"{"schema_version":1,"duration_s":5,"clients":[{"name":"al"}],
            "commands":[{"at_s":1,"client":"al","device":"nope","query":true}]}"#;
        assert!(matches!(Scenario::from_json(bad_ref), Err(ScenarioError::Invalid { field, .. }) if field == "commands[0].device"));
        let version = r#"{"schema_version":7,"duration_s":5}"#;
        assert!(matches!(Scenario::from_json(version), Err(ScenarioError::Invalid { field, .. }) if field == "schema_version"));
    }

    #[test]
    fn groups_expand_with_suffixes_and_defaults() {
        let s = Scenario::from_json(
            r#"{"schema_version":1,"duration_s":5,"devices":[
                {"name":"th","kind":"temp_humidity","count":3},
                {"name":"lamp","kind":"bulb","x":3,"y":4}]}"#,
        )
        .unwrap();
        let d = s.device_instances().unwrap();
        let names: Vec<_> = d.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["th-1", "th-2", "th-3", "lamp"]);
        assert!(d[0].battery && !d[3].battery);
        assert_eq!(d[0].report_interval, Some(SimTime::from_secs(10)));
        assert_eq!(d[3].report_interval, None);
        assert_eq!(d[3].position, Position::new(3.0, 4.0));
        assert!(d[..3].iter().all(|x| x.position.distance(&Position::default()) <= DEFAULT_RADIUS_M));
        assert_eq!(s.device_instances().unwrap(), d);
    }
}

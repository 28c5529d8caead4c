//! Home gateway: authenticated WAN sessions, router admin config, command
//! correlation between CMD envelopes and device acknowledgments, and alarm
//! fan-out to subscribers. Pure state; the event loop owns the clock.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::device::{DeviceMessage, ReportCause};
use crate::mac::DedupWindow;
use crate::sim::{SimRng, SimTime};
use crate::wan::{AlarmBatch, AlarmPayload, CmdAckPayload, Principal, WanEnvelope, WanError};

pub const DEFAULT_CMD_TIMEOUT: SimTime = SimTime::from_secs(5);
pub const DEFAULT_SESSION_TTL: SimTime = SimTime::from_secs(3600);
const REDACTED: &str = "********";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("authentication failed{}", .hint.as_deref().map(|h| format!(": {h}")).unwrap_or_default())]
    AuthFailed { hint: Option<String> },
    #[error("envelope integrity check failed")]
    Integrity,
    #[error("no device at address {0:#04x}")]
    UnknownDevice(u8),
    #[error("delivery to {0:#04x} failed after MAC retries")]
    DeliveryFailed(u8),
    #[error("command timed out")]
    Timeout,
    #[error("unknown config key `{0}`")]
    BadKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("admin role required")]
    Forbidden,
    #[error("wifi is disabled")]
    WifiDisabled,
    #[error("downlink queue for {0:#04x} is full")]
    Busy(u8),
    #[error("malformed command: {0}")]
    Malformed(String),
    #[error("gateway unreachable")]
    Unreachable,
    #[error("device kind {0:#04x} does not accept this command")]
    Unsupported(u8),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::AuthFailed { .. } => "auth_failed",
            GatewayError::Integrity => "integrity",
            GatewayError::UnknownDevice(_) => "unknown_device",
            GatewayError::DeliveryFailed(_) => "delivery_failed",
            GatewayError::Timeout => "timeout",
            GatewayError::BadKey(_) => "bad_key",
            GatewayError::BadValue { .. } => "bad_value",
            GatewayError::Forbidden => "forbidden",
            GatewayError::WifiDisabled => "wifi_disabled",
            GatewayError::Busy(_) => "busy",
            GatewayError::Malformed(_) => "malformed",
            GatewayError::Unreachable => "gateway_unreachable",
            GatewayError::Unsupported(_) => "unsupported",
        }
    }
}

impl From<WanError> for GatewayError {
    fn from(e: WanError) -> Self {
        match e {
            WanError::Integrity => GatewayError::Integrity,
            other => GatewayError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Admin,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub principal: Principal,
    pub role: Role,
    /// Hex HMAC key for envelope tags on this session.
    pub key: String,
    pub expires_at: SimTime,
}

impl Session {
    pub fn key_bytes(&self) -> Vec<u8> {
        hex::decode(&self.key).expect("keys are generated as hex")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WanMode {
    #[default]
    Dhcp,
    Pppoe,
    Static,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pppoe {
    pub user: String,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub version: u64,
    pub wifi_enabled: bool,
    pub ssid: String,
    pub pppoe: Pppoe,
    pub wan_mode: WanMode,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            version: 0,
            wifi_enabled: true,
            ssid: "hearth".into(),
            pppoe: Pppoe::default(),
            wan_mode: WanMode::Dhcp,
        }
    }
}

impl RouterConfig {
    pub const KEYS: [&'static str; 5] = ["wifi_enabled", "ssid", "pppoe.user", "pppoe.secret", "wan_mode"];

    pub fn redacted(&self) -> RouterConfig {
        let mut c = self.clone();
        if !c.pppoe.secret.is_empty() {
            c.pppoe.secret = REDACTED.into();
        }
        c
    }

    /// Applies one key to a copy; the original is untouched on error.
    fn with_key(&self, key: &str, value: &serde_json::Value) -> Result<RouterConfig, GatewayError> {
        let bad = |reason: &str| GatewayError::BadValue {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let mut c = self.clone();
        match key {
            "wifi_enabled" => c.wifi_enabled = value.as_bool().ok_or_else(|| bad("expected a boolean"))?,
            "ssid" => {
                let s = value.as_str().ok_or_else(|| bad("expected a string"))?;
                if s.is_empty() || s.len() > 32 {
                    return Err(bad("ssid must be 1..=32 bytes"));
                }
                c.ssid = s.to_string();
            }
            "pppoe.user" => c.pppoe.user = value.as_str().ok_or_else(|| bad("expected a string"))?.to_string(),
            "pppoe.secret" => c.pppoe.secret = value.as_str().ok_or_else(|| bad("expected a string"))?.to_string(),
            "wan_mode" => {
                c.wan_mode = serde_json::from_value(value.clone()).map_err(|_| bad("expected dhcp, pppoe or static"))?
            }
            other => return Err(GatewayError::BadKey(other.to_string())),
        }
        c.version += 1;
        Ok(c)
    }
}

/// A CMD awaiting its device acknowledgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCommand {
    pub cmd_id: u64,
    pub client: Principal,
    pub addr: u8,
    pub tlv: Vec<u8>,
    pub received_at: SimTime,
    pub deadline: SimTime,
    /// MAC sequence of the downlink frame once it is assigned.
    pub seq: Option<u8>,
}

/// Final outcome of one CMD. Produced exactly once per accepted command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandResolution {
    pub cmd_id: u64,
    pub client: Principal,
    pub addr: u8,
    pub received_at: SimTime,
    pub result: Result<Vec<u8>, GatewayError>,
}

impl CommandResolution {
    pub fn ack_payload(&self) -> CmdAckPayload {
        match &self.result {
            Ok(report) => CmdAckPayload {
                cmd_id: self.cmd_id,
                addr: self.addr,
                ok: true,
                error: None,
                report: Some(hex::encode(report)),
            },
            Err(e) => CmdAckPayload {
                cmd_id: self.cmd_id,
                addr: self.addr,
                ok: false,
                error: Some(e.code().to_string()),
                report: None,
            },
        }
    }
}

/// Correlates downlink commands with acknowledging REPORTs.
#[derive(Debug, Clone, Default)]
pub struct CommandTracker {
    pending: BTreeMap<u64, PendingCommand>,
    by_seq: BTreeMap<(u8, u8), u64>,
}

impl CommandTracker {
    pub fn begin(&mut self, cmd: PendingCommand) {
        self.pending.insert(cmd.cmd_id, cmd);
    }

    pub fn get(&self, cmd_id: u64) -> Option<&PendingCommand> {
        self.pending.get(&cmd_id)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn bind_seq(&mut self, cmd_id: u64, seq: u8) {
        if let Some(c) = self.pending.get_mut(&cmd_id) {
            c.seq = Some(seq);
            self.by_seq.insert((c.addr, seq), cmd_id);
        }
    }

    fn take(&mut self, cmd_id: u64) -> Option<PendingCommand> {
        let c = self.pending.remove(&cmd_id)?;
        if let Some(seq) = c.seq {
            if self.by_seq.get(&(c.addr, seq)) == Some(&cmd_id) {
                self.by_seq.remove(&(c.addr, seq));
            }
        }
        Some(c)
    }

    fn resolve(&mut self, cmd_id: u64, result: Result<Vec<u8>, GatewayError>) -> Option<CommandResolution> {
        let c = self.take(cmd_id)?;
        Some(CommandResolution {
            cmd_id,
            client: c.client,
            addr: c.addr,
            received_at: c.received_at,
            result,
        })
    }

    /// Matches a REPORT from `addr` against a pending command by `ref_seq`.
    pub fn on_report(&mut self, addr: u8, report: &DeviceMessage) -> Option<CommandResolution> {
        let (_, cause, ref_seq) = report.report_header()?;
        if cause == ReportCause::Periodic {
            return None;
        }
        let cmd_id = *self.by_seq.get(&(addr, ref_seq))?;
        self.resolve(cmd_id, Ok(report.encode().expect("decoded TLVs re-encode")))
    }

    pub fn fail(&mut self, cmd_id: u64, err: GatewayError) -> Option<CommandResolution> {
        self.resolve(cmd_id, Err(err))
    }

    pub fn expire(&mut self, now: SimTime) -> Vec<CommandResolution> {
        let due: Vec<u64> = self.pending.values().filter(|c| c.deadline <= now).map(|c| c.cmd_id).collect();
        due.into_iter().filter_map(|id| self.resolve(id, Err(GatewayError::Timeout))).collect()
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.pending.values().map(|c| c.deadline).min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AlarmMode {
    Push,
    Poll { interval: SimTime },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub alarm: AlarmPayload,
    pub acknowledged: bool,
}

#[derive(Debug, Clone)]
struct Subscriber {
    mode: AlarmMode,
    batch: Vec<AlarmPayload>,
}

/// Alarm log plus per-subscriber delivery. Push subscribers get one
/// envelope per alarm; poll subscribers get one batch per interval, only
/// when non-empty.
#[derive(Debug, Clone)]
pub struct AlarmCenter {
    subscribers: BTreeMap<Principal, Subscriber>,
    dedup: DedupWindow,
    log: VecDeque<AlarmRecord>,
    log_cap: usize,
    next_id: u64,
}

impl Default for AlarmCenter {
    fn default() -> Self {
        AlarmCenter {
            subscribers: BTreeMap::new(),
            dedup: DedupWindow::new(8),
            log: VecDeque::new(),
            log_cap: 10_000,
            next_id: 1,
        }
    }
}

impl AlarmCenter {
    pub fn subscribe(&mut self, who: Principal, mode: AlarmMode) {
        self.subscribers.insert(who, Subscriber { mode, batch: Vec::new() });
    }

    pub fn unsubscribe(&mut self, who: &Principal) {
        self.subscribers.remove(who);
    }

    pub fn mode_of(&self, who: &Principal) -> Option<AlarmMode> {
        self.subscribers.get(who).map(|s| s.mode)
    }

    pub fn subscribers(&self) -> impl Iterator<Item = (&Principal, AlarmMode)> {
        self.subscribers.iter().map(|(p, s)| (p, s.mode))
    }

    /// Records an ALARM carried in MAC frame `(addr, seq)`. Returns `None`
    /// for a duplicate frame; otherwise the alarm and the push deliveries.
    pub fn ingest(
        &mut self,
        addr: u8,
        seq: u8,
        msg: &DeviceMessage,
        now: SimTime,
    ) -> Option<(AlarmPayload, Vec<(Principal, AlarmBatch)>)> {
        let (kind, rule) = msg.alarm_header()?;
        if !self.dedup.accept(0, addr, seq) {
            return None;
        }
        let alarm = AlarmPayload {
            alarm_id: self.next_id,
            addr,
            kind,
            rule,
            seq,
            raised_at_us: now.as_micros(),
            tlv: hex::encode(msg.encode().ok()?),
        };
        self.next_id += 1;
        self.log.push_back(AlarmRecord {
            alarm: alarm.clone(),
            acknowledged: false,
        });
        if self.log.len() > self.log_cap {
            self.log.pop_front();
        }
        let mut push = Vec::new();
        for (who, sub) in self.subscribers.iter_mut() {
            match sub.mode {
                AlarmMode::Push => push.push((
                    who.clone(),
                    AlarmBatch {
                        alarms: vec![alarm.clone()],
                    },
                )),
                AlarmMode::Poll { .. } => sub.batch.push(alarm.clone()),
            }
        }
        Some((alarm, push))
    }

    /// Takes the pending batch of a poll subscriber, if any.
    pub fn flush(&mut self, who: &Principal) -> Option<AlarmBatch> {
        let sub = self.subscribers.get_mut(who)?;
        if sub.batch.is_empty() {
            return None;
        }
        Some(AlarmBatch {
            alarms: std::mem::take(&mut sub.batch),
        })
    }

    pub fn acknowledge(&mut self, alarm_id: u64) -> bool {
        match self.log.iter_mut().find(|r| r.alarm.alarm_id == alarm_id) {
            Some(r) => {
                r.acknowledged = true;
                true
            }
            None => false,
        }
    }

    /// Newest first.
    pub fn page(&self, offset: usize, limit: usize) -> Vec<AlarmRecord> {
        self.log.iter().rev().skip(offset).take(limit).cloned().collect()
    }

    pub fn total(&self) -> usize {
        self.log.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub cmd_timeout: SimTime,
    pub session_ttl: SimTime,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            cmd_timeout: DEFAULT_CMD_TIMEOUT,
            session_ttl: DEFAULT_SESSION_TTL,
        }
    }
}

#[derive(Debug, Clone)]
struct LocalUser {
    secret_digest: [u8; 32],
    role: Role,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub principal: Principal,
    config: GatewayConfig,
    users: BTreeMap<String, LocalUser>,
    sessions: BTreeMap<String, Session>,
    router: RouterConfig,
    pub commands: CommandTracker,
    pub alarms: AlarmCenter,
    rng: SimRng,
    wifi_clients: Vec<String>,
}

impl Gateway {
    pub fn new(name: &str, config: GatewayConfig, rng: SimRng) -> Self {
        Gateway {
            principal: Principal::gateway(name),
            config,
            users: BTreeMap::new(),
            sessions: BTreeMap::new(),
            router: RouterConfig::default(),
            commands: CommandTracker::default(),
            alarms: AlarmCenter::default(),
            rng,
            wifi_clients: Vec::new(),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn add_user(&mut self, name: &str, secret: &str, role: Role) {
        self.users.insert(
            name.to_string(),
            LocalUser {
                secret_digest: Sha256::digest(secret.as_bytes()).into(),
                role,
            },
        );
    }

    pub fn authenticate_session(&mut self, name: &str, secret: &str, now: SimTime) -> Result<Session, GatewayError> {
        let user = self.users.get(name).ok_or(GatewayError::AuthFailed { hint: None })?;
        let digest: [u8; 32] = Sha256::digest(secret.as_bytes()).into();
        if digest != user.secret_digest {
            return Err(GatewayError::AuthFailed { hint: None });
        }
        let mut token = [0u8; 16];
        let mut key = [0u8; 32];
        for chunk in token.chunks_mut(8).chain(key.chunks_mut(8)) {
            chunk.copy_from_slice(&self.rng.next_u64().to_be_bytes());
        }
        let session = Session {
            token: hex::encode(token),
            principal: Principal::user(name),
            role: user.role,
            key: hex::encode(key),
            expires_at: now + self.config.session_ttl,
        };
        self.sessions.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn session(&self, token: &str, now: SimTime) -> Result<&Session, GatewayError> {
        let s = self.sessions.get(token).ok_or(GatewayError::AuthFailed { hint: None })?;
        if now >= s.expires_at {
            return Err(GatewayError::AuthFailed {
                hint: Some("session expired; authenticate again".into()),
            });
        }
        Ok(s)
    }

    /// Validates an inbound envelope on `token`'s session.
    pub fn check_envelope(&self, token: &str, env: &WanEnvelope, now: SimTime) -> Result<&Session, GatewayError> {
        let s = self.session(token, now)?;
        env.verify(&s.key_bytes())?;
        if env.from != s.principal {
            return Err(GatewayError::Forbidden);
        }
        Ok(s)
    }

    /// Session whose principal matches `who` (newest wins).
    pub fn session_for(&self, who: &Principal, now: SimTime) -> Option<&Session> {
        self.sessions
            .values()
            .filter(|s| &s.principal == who && now < s.expires_at)
            .max_by_key(|s| s.expires_at)
    }

    pub fn admin_get(&self) -> RouterConfig {
        self.router.redacted()
    }

    pub fn admin_set(&mut self, role: Role, key: &str, value: &serde_json::Value) -> Result<RouterConfig, GatewayError> {
        if role != Role::Admin {
            return Err(GatewayError::Forbidden);
        }
        self.router = self.router.with_key(key, value)?;
        Ok(self.router.redacted())
    }

    /// Simulated WiFi client association on the LAN side.
    pub fn wifi_attach(&mut self, client: &str) -> Result<(), GatewayError> {
        if !self.router.wifi_enabled {
            return Err(GatewayError::WifiDisabled);
        }
        self.wifi_clients.push(client.to_string());
        Ok(())
    }

    pub fn wifi_clients(&self) -> &[String] {
        &self.wifi_clients
    }

    /// Registers an accepted CMD; the caller routes the TLV downlink.
    pub fn begin_command(&mut self, cmd_id: u64, client: Principal, addr: u8, tlv: Vec<u8>, now: SimTime) -> &PendingCommand {
        self.commands.begin(PendingCommand {
            cmd_id,
            client,
            addr,
            tlv,
            received_at: now,
            deadline: now + self.config.cmd_timeout,
            seq: None,
        });
        self.commands.get(cmd_id).expect("just inserted")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::TlvType;
    use crate::wan::{CmdPayload, EnvelopeKind};
    use serde_json::json;

    fn gw() -> Gateway {
        let mut g = Gateway::new("home", GatewayConfig::default(), SimRng::new(1));
        g.add_user("alice", "pw", Role::Admin);
        g.add_user("bob", "pw", Role::User);
        g
    }

    fn cmd_env(from: &str) -> WanEnvelope {
        WanEnvelope::new(
            1,
            EnvelopeKind::Cmd,
            Principal::user(from),
            Principal::gateway("home"),
            serde_json::to_value(CmdPayload::new(1, &DeviceMessage::new(TlvType::SetActuator, vec![1]))).unwrap(),
        )
    }

    #[test]
    fn valid_login_and_signed_envelope() {
        let mut g = gw();
        let s = g.authenticate_session("alice", "pw", SimTime::ZERO).unwrap();
        let env = cmd_env("alice").signed(&s.key_bytes());
        assert!(g.check_envelope(&s.token, &env, SimTime::from_secs(1)).is_ok());
    }

    #[test]
    fn tampered_envelope_is_rejected() {
        let mut g = gw();
        let s = g.authenticate_session("alice", "pw", SimTime::ZERO).unwrap();
        let mut env = cmd_env("alice").signed(&s.key_bytes());
        env.payload["tlv"] = json!("010100");
        assert_eq!(g.check_envelope(&s.token, &env, SimTime::ZERO).unwrap_err(), GatewayError::Integrity);
    }

    #[test]
    fn bad_credentials_and_expiry() {
        let mut g = gw();
        assert_eq!(
            g.authenticate_session("alice", "nope", SimTime::ZERO).unwrap_err(),
            GatewayError::AuthFailed { hint: None }
        );
        let s = g.authenticate_session("alice", "pw", SimTime::ZERO).unwrap();
        match g.session(&s.token, DEFAULT_SESSION_TTL) {
            Err(GatewayError::AuthFailed { hint: Some(h) }) => assert!(h.contains("authenticate")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sessions_use_distinct_keys() {
        let mut g = gw();
        let a = g.authenticate_session("alice", "pw", SimTime::ZERO).unwrap();
        let b = g.authenticate_session("bob", "pw", SimTime::ZERO).unwrap();
        assert_ne!(a.token, b.token);
        let env = cmd_env("bob").signed(&a.key_bytes());
        assert_eq!(g.check_envelope(&b.token, &env, SimTime::ZERO).unwrap_err(), GatewayError::Integrity);
    }

    #[test]
    fn admin_config_rules() {
        let mut g = gw();
        g.admin_set(Role::Admin, "pppoe.user", &json!("isp-user")).unwrap();
        let c = g.admin_set(Role::Admin, "pppoe.secret", &json!("hunter2")).unwrap();
        assert_eq!(c.pppoe.user, "isp-user");
        assert_eq!(c.pppoe.secret, REDACTED);
        assert_eq!(c.version, 2);
        assert_eq!(g.admin_get().pppoe.secret, REDACTED);
        assert_eq!(g.admin_set(Role::User, "ssid", &json!("x")), Err(GatewayError::Forbidden));
        assert_eq!(g.admin_set(Role::Admin, "dns", &json!("x")), Err(GatewayError::BadKey("dns".into())));
        assert!(matches!(g.admin_set(Role::Admin, "wifi_enabled", &json!("no")), Err(GatewayError::BadValue { .. })));
        assert_eq!(g.admin_get().version, 2);
    }

    #[test]
    fn wifi_flag_gates_attach() {
        let mut g = gw();
        g.wifi_attach("laptop").unwrap();
        g.admin_set(Role::Admin, "wifi_enabled", &json!(false)).unwrap();
        assert_eq!(g.wifi_attach("phone"), Err(GatewayError::WifiDisabled));
    }

    #[test]
    fn command_resolves_once() {
        let mut g = gw();
        g.begin_command(9, Principal::user("alice"), 3, vec![1, 1, 1], SimTime::ZERO);
        g.commands.bind_seq(9, 42);
        let report = DeviceMessage::new(TlvType::Report, vec![1, ReportCause::CommandAck as u8, 42, 1]);
        let periodic = DeviceMessage::new(TlvType::Report, vec![1, 0, 42, 1]);
        assert!(g.commands.on_report(3, &periodic).is_none());
        assert!(g.commands.on_report(4, &report).is_none());
        let r = g.commands.on_report(3, &report).unwrap();
        assert_eq!(r.cmd_id, 9);
        assert!(r.ack_payload().ok);
        assert!(g.commands.on_report(3, &report).is_none());
        assert!(g.commands.expire(SimTime::from_secs(10)).is_empty());
        assert!(g.commands.fail(9, GatewayError::Timeout).is_none());
    }

    #[test]
    fn command_times_out_at_deadline() {
        let mut g = gw();
        g.begin_command(1, Principal::user("alice"), 3, vec![], SimTime::ZERO);
        assert!(g.commands.expire(SimTime::from_millis(4999)).is_empty());
        let out = g.commands.expire(SimTime::from_secs(5));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].result, Err(GatewayError::Timeout));
        assert_eq!(out[0].ack_payload().error.as_deref(), Some("timeout"));
    }

    #[test]
    fn alarm_fan_out_and_dedup() {
        let mut c = AlarmCenter::default();
        c.subscribe(Principal::user("a"), AlarmMode::Push);
        c.subscribe(Principal::user("b"), AlarmMode::Push);
        c.subscribe(
            Principal::user("p"),
            AlarmMode::Poll {
                interval: SimTime::from_secs(60),
            },
        );
        let msg = DeviceMessage::new(TlvType::Alarm, vec![5, 0, 1, 3, 0x84]);
        let (alarm, push) = c.ingest(7, 11, &msg, SimTime::ZERO).unwrap();
        assert_eq!(push.len(), 2);
        assert_eq!(push[0].1, push[1].1);
        assert!(c.ingest(7, 11, &msg, SimTime::ZERO).is_none());
        c.ingest(7, 12, &msg, SimTime::ZERO).unwrap();
        let batch = c.flush(&Principal::user("p")).unwrap();
        assert_eq!(batch.alarms.len(), 2);
        assert_eq!(batch.alarms[0], alarm);
        assert!(c.flush(&Principal::user("p")).is_none());
        assert!(c.acknowledge(alarm.alarm_id));
        let page = c.page(0, 10);
        assert_eq!(page.len(), 2);
        assert!(page[1].acknowledged && !page[0].acknowledged);
    }
}

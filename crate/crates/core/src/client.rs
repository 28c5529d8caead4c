//! User-side client: command issuance with latency measurement, the alarm
//! inbox, and envelope accounting for the push/poll comparison.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceMessage;
use crate::gateway::{AlarmMode, Session};
use crate::sim::SimTime;
use crate::wan::{AlarmBatch, AlarmPayload, CmdAckPayload, CmdPayload, EnvelopeKind, Principal, WanEnvelope};

/// Client-side give-up time for a command, above the gateway's own
/// timeout so that gateway errors normally arrive first.
pub const DEFAULT_CLIENT_TIMEOUT: SimTime = SimTime::from_secs(6);

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ClientError {
    #[error("not logged in")]
    NotLoggedIn,
    #[error("gateway unreachable")]
    GatewayUnreachable,
    #[error("command timed out")]
    Timeout,
    #[error("gateway error: {0}")]
    Gateway(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxEntry {
    pub time: SimTime,
    pub device: u8,
    pub alarm_id: u64,
    pub kind: u8,
    pub rule: u8,
    pub payload: String,
    pub acknowledged: bool,
}

/// Append-only alarm list, deduplicated by `(device, alarm_id)`.
#[derive(Debug, Clone, Default)]
pub struct AlarmInbox {
    entries: Vec<InboxEntry>,
    seen: BTreeSet<(u8, u64)>,
}

impl AlarmInbox {
    pub fn insert(&mut self, alarm: &AlarmPayload, now: SimTime) -> bool {
        if !self.seen.insert((alarm.addr, alarm.alarm_id)) {
            return false;
        }
        self.entries.push(InboxEntry {
            time: now,
            device: alarm.addr,
            alarm_id: alarm.alarm_id,
            kind: alarm.kind,
            rule: alarm.rule,
            payload: alarm.tlv.clone(),
            acknowledged: false,
        });
        true
    }

    pub fn acknowledge(&mut self, alarm_id: u64) -> bool {
        match self.entries.iter_mut().find(|e| e.alarm_id == alarm_id) {
            Some(e) => {
                e.acknowledged = true;
                true
            }
            None => false,
        }
    }

    pub fn entries(&self) -> &[InboxEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandResult {
    pub cmd_id: u64,
    pub addr: u8,
    pub sent_at: SimTime,
    pub resolved_at: SimTime,
    pub outcome: Result<String, ClientError>,
}

impl CommandResult {
    pub fn latency(&self) -> SimTime {
        self.resolved_at - self.sent_at
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    CommandDone(CommandResult),
    /// Alarms newly added to the inbox (duplicates filtered).
    Alarms(Vec<AlarmPayload>),
    /// An ack for a command already resolved (late or duplicate).
    Stale(u64),
    Other(WanEnvelope),
}

#[derive(Debug, Clone)]
struct InFlight {
    addr: u8,
    sent_at: SimTime,
    deadline: SimTime,
}

#[derive(Debug, Clone)]
pub struct ClientCore {
    pub principal: Principal,
    pub gateway: Principal,
    pub mode: AlarmMode,
    pub timeout: SimTime,
    session: Option<Session>,
    next_msg_id: u64,
    in_flight: BTreeMap<u64, InFlight>,
    results: Vec<CommandResult>,
    inbox: AlarmInbox,
    envelopes_in: u64,
    alarm_envelopes_in: u64,
    envelopes_out: u64,
}

impl ClientCore {
    pub fn new(name: &str, gateway: Principal, mode: AlarmMode) -> Self {
        ClientCore {
            principal: Principal::user(name),
            gateway,
            mode,
            timeout: DEFAULT_CLIENT_TIMEOUT,
            session: None,
            next_msg_id: 1,
            in_flight: BTreeMap::new(),
            results: Vec::new(),
            inbox: AlarmInbox::default(),
            envelopes_in: 0,
            alarm_envelopes_in: 0,
            envelopes_out: 0,
        }
    }

    pub fn bind(&mut self, session: Session) {
        self.session = Some(session);
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn logged_in(&self) -> bool {
        self.session.is_some()
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_msg_id;
        self.next_msg_id += 1;
        id
    }

    /// Builds a signed envelope of `kind` for the gateway.
    pub fn envelope(&mut self, kind: EnvelopeKind, to: Principal, payload: serde_json::Value) -> Result<WanEnvelope, ClientError> {
        let key = self.session.as_ref().ok_or(ClientError::NotLoggedIn)?.key_bytes();
        let id = self.next_id();
        self.envelopes_out += 1;
        Ok(WanEnvelope::new(id, kind, self.principal.clone(), to, payload).signed(&key))
    }

    pub fn send_command(&mut self, addr: u8, msg: &DeviceMessage, now: SimTime) -> Result<WanEnvelope, ClientError> {
        let payload = serde_json::to_value(CmdPayload::new(addr, msg)).expect("serializable");
        let env = self.envelope(EnvelopeKind::Cmd, self.gateway.clone(), payload)?;
        self.in_flight.insert(
            env.msg_id,
            InFlight {
                addr,
                sent_at: now,
                deadline: now + self.timeout,
            },
        );
        Ok(env)
    }

    fn finish(&mut self, cmd_id: u64, outcome: Result<String, ClientError>, now: SimTime) -> Option<CommandResult> {
        let f = self.in_flight.remove(&cmd_id)?;
        let r = CommandResult {
            cmd_id,
            addr: f.addr,
            sent_at: f.sent_at,
            resolved_at: now,
            outcome,
        };
        self.results.push(r.clone());
        Some(r)
    }

    pub fn on_envelope(&mut self, env: WanEnvelope, now: SimTime) -> ClientEvent {
        self.envelopes_in += 1;
        match env.kind {
            EnvelopeKind::CmdAck => {
                let Ok(ack) = serde_json::from_value::<CmdAckPayload>(env.payload.clone()) else {
                    return ClientEvent::Other(env);
                };
                let outcome = if ack.ok {
                    Ok(ack.report.unwrap_or_default())
                } else {
                    Err(ClientError::Gateway(ack.error.unwrap_or_default()))
                };
                match self.finish(ack.cmd_id, outcome, now) {
                    Some(r) => ClientEvent::CommandDone(r),
                    None => ClientEvent::Stale(ack.cmd_id),
                }
            }
            EnvelopeKind::Alarm => {
                self.alarm_envelopes_in += 1;
                let Ok(batch) = serde_json::from_value::<AlarmBatch>(env.payload.clone()) else {
                    return ClientEvent::Other(env);
                };
                let fresh = batch.alarms.into_iter().filter(|a| self.inbox.insert(a, now)).collect();
                ClientEvent::Alarms(fresh)
            }
            _ => ClientEvent::Other(env),
        }
    }

    /// Fails commands whose client-side deadline has passed.
    pub fn expire(&mut self, now: SimTime) -> Vec<CommandResult> {
        let due: Vec<u64> = self.in_flight.iter().filter(|(_, f)| f.deadline <= now).map(|(id, _)| *id).collect();
        due.into_iter().filter_map(|id| self.finish(id, Err(ClientError::Timeout), now)).collect()
    }

    pub fn deadline_of(&self, cmd_id: u64) -> Option<SimTime> {
        self.in_flight.get(&cmd_id).map(|f| f.deadline)
    }

    pub fn results(&self) -> &[CommandResult] {
        &self.results
    }

    pub fn pending(&self) -> usize {
        self.in_flight.len()
    }

    pub fn inbox(&self) -> &AlarmInbox {
        &self.inbox
    }

    pub fn inbox_mut(&mut self) -> &mut AlarmInbox {
        &mut self.inbox
    }

    pub fn envelopes_in(&self) -> u64 {
        self.envelopes_in
    }

    pub fn alarm_envelopes_in(&self) -> u64 {
        self.alarm_envelopes_in
    }

    pub fn envelopes_out(&self) -> u64 {
        self.envelopes_out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::TlvType;
    use crate::gateway::Role;

    fn client() -> ClientCore {
        let mut c = ClientCore::new("alice", Principal::gateway("home"), AlarmMode::Push);
        c.bind(Session {
            token: "t".into(),
            principal: Principal::user("alice"),
            role: Role::Admin,
            key: "00".into(),
            expires_at: SimTime::MAX,
        });
        c
    }

    fn alarm(id: u64, addr: u8) -> AlarmPayload {
        AlarmPayload {
            alarm_id: id,
            addr,
            kind: 5,
            rule: 0,
            seq: 1,
            raised_at_us: 0,
            tlv: "04".into(),
        }
    }

    fn ack(cmd_id: u64, ok: bool) -> WanEnvelope {
        let p = CmdAckPayload {
            cmd_id,
            addr: 1,
            ok,
            error: (!ok).then(|| "unknown_device".to_string()),
            report: ok.then(|| "0303010101".to_string()),
        };
        WanEnvelope::new(
            100 + cmd_id,
            EnvelopeKind::CmdAck,
            Principal::gateway("home"),
            Principal::user("alice"),
            serde_json::to_value(p).unwrap(),
        )
    }

    fn batch(alarms: Vec<AlarmPayload>) -> WanEnvelope {
        WanEnvelope::new(
            1,
            EnvelopeKind::Alarm,
            Principal::gateway("home"),
            Principal::user("alice"),
            serde_json::to_value(AlarmBatch { alarms }).unwrap(),
        )
    }

    #[test]
    fn not_logged_in() {
        let mut c = ClientCore::new("x", Principal::gateway("home"), AlarmMode::Push);
        let m = DeviceMessage::new(TlvType::QueryState, vec![]);
        assert_eq!(c.send_command(1, &m, SimTime::ZERO), Err(ClientError::NotLoggedIn));
    }

    #[test]
    fn command_ack_measures_latency_once() {
        let mut c = client();
        let env = c.send_command(1, &DeviceMessage::new(TlvType::SetActuator, vec![1]), SimTime::from_millis(100)).unwrap();
        match c.on_envelope(ack(env.msg_id, true), SimTime::from_millis(900)) {
            ClientEvent::CommandDone(r) => assert_eq!(r.latency(), SimTime::from_millis(800)),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.on_envelope(ack(env.msg_id, true), SimTime::from_secs(1)), ClientEvent::Stale(env.msg_id));
        assert_eq!(c.results().len(), 1);
    }

    #[test]
    fn gateway_error_passes_through() {
        let mut c = client();
        let env = c.send_command(0x77, &DeviceMessage::new(TlvType::QueryState, vec![]), SimTime::ZERO).unwrap();
        match c.on_envelope(ack(env.msg_id, false), SimTime::from_millis(5)) {
            ClientEvent::CommandDone(r) => assert_eq!(r.outcome, Err(ClientError::Gateway("unknown_device".into()))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timeout_then_late_ack_is_stale() {
        let mut c = client();
        let env = c.send_command(1, &DeviceMessage::new(TlvType::QueryState, vec![]), SimTime::ZERO).unwrap();
        assert!(c.expire(SimTime::from_secs(5)).is_empty());
        let out = c.expire(DEFAULT_CLIENT_TIMEOUT);
        assert_eq!(out[0].outcome, Err(ClientError::Timeout));
        assert_eq!(c.on_envelope(ack(env.msg_id, true), SimTime::from_secs(7)), ClientEvent::Stale(env.msg_id));
    }

    #[test]
    fn inbox_dedups_across_batches() {
        let mut c = client();
        c.on_envelope(batch(vec![alarm(1, 5)]), SimTime::ZERO);
        match c.on_envelope(batch(vec![alarm(1, 5), alarm(2, 5), alarm(3, 6)]), SimTime::from_secs(60)) {
            ClientEvent::Alarms(a) => assert_eq!(a.iter().map(|x| x.alarm_id).collect::<Vec<_>>(), vec![2, 3]),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.inbox().len(), 3);
        assert!(c.inbox_mut().acknowledge(2));
        assert!(c.inbox().entries()[1].acknowledged);
        assert_eq!(c.alarm_envelopes_in(), 2);
    }
}

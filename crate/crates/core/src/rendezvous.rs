//! Cloud rendezvous server: accounts, sessions and presence, roster and
//! chat, envelope relay with an offline queue, NAT modeling and P2P
//! brokering. A pure state machine; the caller supplies the clock and
//! carries returned deliveries over the WAN.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sim::{EventQueue, SimRng, SimTime, TraceEvent};
use crate::wan::{EnvelopeKind, Principal, WanEnvelope, WanPath};

pub const DEFAULT_SIZE_THRESHOLD: usize = 4096;
pub const DEFAULT_OFFLINE_QUEUE_CAP: usize = 256;
pub const DEFAULT_MAX_SESSIONS: usize = 6000;
const DEDUP_PER_SENDER: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RendezvousError {
    #[error("`{0}` is already registered")]
    Conflict(Principal),
    #[error("authentication failed")]
    AuthFailed,
    #[error("unknown principal {0}")]
    UnknownPrincipal(Principal),
    #[error("unknown or expired session {0}")]
    UnknownSession(u64),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("{0} is offline")]
    Offline(Principal),
    #[error("hole punch failed between {0:?} and {1:?}")]
    PunchFailed(NatType, NatType),
    #[error("server full: {0} sessions")]
    ServerFull(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NatType {
    Open,
    FullCone,
    Restricted,
    PortRestricted,
    Symmetric,
}

impl NatType {
    pub const ALL: [NatType; 5] = [
        NatType::Open,
        NatType::FullCone,
        NatType::Restricted,
        NatType::PortRestricted,
        NatType::Symmetric,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NatType::Open => "open",
            NatType::FullCone => "full_cone",
            NatType::Restricted => "restricted",
            NatType::PortRestricted => "port_restricted",
            NatType::Symmetric => "symmetric",
        }
    }
}

impl std::str::FromStr for NatType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        NatType::ALL
            .into_iter()
            .find(|n| n.label() == s)
            .ok_or_else(|| format!("unknown NAT type `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NatProfile {
    #[serde(rename = "type")]
    pub nat_type: NatType,
    /// Public endpoint the server observes for this party.
    pub endpoint: String,
}

impl NatProfile {
    pub fn new(nat_type: NatType, endpoint: impl Into<String>) -> Self {
        NatProfile {
            nat_type,
            endpoint: endpoint.into(),
        }
    }
}

/// Which NAT pairs defeat simultaneous-open hole punching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PunchModel {
    /// Fails when both sides are symmetric, or one is symmetric and the
    /// other port-restricted (the symmetric side's fresh port never matches
    /// the port-restricted filter).
    #[default]
    Classic,
    /// Fails only when both sides are symmetric.
    BothSymmetric,
}

pub fn hole_punch_succeeds(model: PunchModel, a: NatType, b: NatType) -> bool {
    use NatType::*;
    match model {
        PunchModel::BothSymmetric => !(a == Symmetric && b == Symmetric),
        PunchModel::Classic => !matches!((a, b), (Symmetric, Symmetric) | (Symmetric, PortRestricted) | (PortRestricted, Symmetric)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Relay,
    P2pDirect,
    P2pFailedFallbackRelay,
}

impl PathKind {
    pub fn label(self) -> &'static str {
        match self {
            PathKind::Relay => "relay",
            PathKind::P2pDirect => "p2p_direct",
            PathKind::P2pFailedFallbackRelay => "p2p_failed_fallback_relay",
        }
    }

    pub fn wan_path(self) -> WanPath {
        match self {
            PathKind::P2pDirect => WanPath::P2p,
            _ => WanPath::Relay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathDecision {
    pub payload_size: usize,
    pub nat_a: NatType,
    pub nat_b: NatType,
    pub decision: PathKind,
}

pub fn decide_path(payload_size: usize, nat_a: NatType, nat_b: NatType, threshold: usize, model: PunchModel) -> PathDecision {
    let decision = if payload_size <= threshold {
        PathKind::Relay
    } else if hole_punch_succeeds(model, nat_a, nat_b) {
        PathKind::P2pDirect
    } else {
        PathKind::P2pFailedFallbackRelay
    };
    PathDecision {
        payload_size,
        nat_a,
        nat_b,
        decision,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RendezvousConfig {
    pub size_threshold: usize,
    pub offline_queue_cap: usize,
    pub max_sessions: usize,
    pub heartbeat_interval: SimTime,
    pub session_timeout: SimTime,
    pub punch_model: PunchModel,
}

impl Default for RendezvousConfig {
    fn default() -> Self {
        RendezvousConfig {
            size_threshold: DEFAULT_SIZE_THRESHOLD,
            offline_queue_cap: DEFAULT_OFFLINE_QUEUE_CAP,
            max_sessions: DEFAULT_MAX_SESSIONS,
            heartbeat_interval: SimTime::from_secs(30),
            session_timeout: SimTime::from_secs(90),
            punch_model: PunchModel::Classic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub owner: Principal,
    pub contacts: BTreeSet<Principal>,
    pub presence: BTreeMap<Principal, Presence>,
}

#[derive(Debug, Clone)]
struct Account {
    id: u64,
    secret_digest: [u8; 32],
    contacts: BTreeSet<Principal>,
    /// Outgoing contact requests not yet reciprocated.
    requested: BTreeSet<Principal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u64,
    pub principal: Principal,
    pub nat: NatProfile,
    pub opened_at: SimTime,
    pub last_heartbeat: SimTime,
}

/// An envelope the caller must carry to an online session.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub session: u64,
    pub to: Principal,
    pub env: WanEnvelope,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelayOutcome {
    Delivered(Delivery),
    Queued { depth: usize },
    Duplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoginOutcome {
    pub session: u64,
    /// Queued envelopes released by this login, in arrival order.
    pub flushed: Vec<Delivery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct P2pChannel {
    pub a: Principal,
    pub b: Principal,
    pub endpoint_a: String,
    pub endpoint_b: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerCounters {
    pub relayed_envelopes: u64,
    /// Bytes of payload-bearing envelopes the server forwarded.
    pub relay_payload_bytes: u64,
    /// Bytes spent brokering P2P channels.
    pub setup_bytes: u64,
    pub p2p_channels: u64,
    pub punch_failures: u64,
    pub duplicates: u64,
    pub queued: u64,
    pub dropped_messages: u64,
    pub dropped_sessions: u64,
    pub heartbeats: u64,
    pub peak_sessions: u64,
}

#[derive(Debug, Default, Clone)]
struct SenderDedup {
    order: VecDeque<u64>,
    seen: HashSet<u64>,
}

impl SenderDedup {
    fn accept(&mut self, msg_id: u64) -> bool {
        if !self.seen.insert(msg_id) {
            return false;
        }
        self.order.push_back(msg_id);
        if self.order.len() > DEDUP_PER_SENDER {
            let old = self.order.pop_front().expect("non-empty");
            self.seen.remove(&old);
        }
        true
    }
}

fn digest(secret: &str) -> [u8; 32] {
    Sha256::digest(secret.as_bytes()).into()
}

#[derive(Debug, Clone)]
pub struct RendezvousServer {
    config: RendezvousConfig,
    accounts: BTreeMap<Principal, Account>,
    sessions: BTreeMap<u64, SessionInfo>,
    online: BTreeMap<Principal, u64>,
    offline_queue: BTreeMap<Principal, VecDeque<WanEnvelope>>,
    dedup: BTreeMap<Principal, SenderDedup>,
    counters: ServerCounters,
    next_account: u64,
    next_session: u64,
    events: Vec<TraceEvent>,
}

impl Default for RendezvousServer {
    fn default() -> Self {
        Self::new(RendezvousConfig::default())
    }
}

impl RendezvousServer {
    pub fn new(config: RendezvousConfig) -> Self {
        RendezvousServer {
            config,
            accounts: BTreeMap::new(),
            sessions: BTreeMap::new(),
            online: BTreeMap::new(),
            offline_queue: BTreeMap::new(),
            dedup: BTreeMap::new(),
            counters: ServerCounters::default(),
            next_account: 1,
            next_session: 1,
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &RendezvousConfig {
        &self.config
    }

    pub fn counters(&self) -> ServerCounters {
        self.counters
    }

    /// Trace events produced since the last call.
    pub fn drain_events(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.events)
    }

    fn emit(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn register(&mut self, principal: Principal, secret: &str) -> Result<u64, RendezvousError> {
        if self.accounts.contains_key(&principal) {
            return Err(RendezvousError::Conflict(principal));
        }
        let id = self.next_account;
        self.next_account += 1;
        self.accounts.insert(
            principal,
            Account {
                id,
                secret_digest: digest(secret),
                contacts: BTreeSet::new(),
                requested: BTreeSet::new(),
            },
        );
        Ok(id)
    }

    pub fn register_user(&mut self, name: &str, secret: &str) -> Result<u64, RendezvousError> {
        self.register(Principal::user(name), secret)
    }

    pub fn is_registered(&self, p: &Principal) -> bool {
        self.accounts.contains_key(p)
    }

    pub fn account_id(&self, p: &Principal) -> Option<u64> {
        self.accounts.get(p).map(|a| a.id)
    }

    /// Opens a session bound to `nat`. A second login by the same principal
    /// replaces the first session. Queued envelopes are released in order.
    pub fn login(&mut self, principal: &Principal, secret: &str, nat: NatProfile, now: SimTime) -> Result<LoginOutcome, RendezvousError> {
        let acct = self.accounts.get(principal).ok_or(RendezvousError::AuthFailed)?;
        if acct.secret_digest != digest(secret) {
            return Err(RendezvousError::AuthFailed);
        }
        if let Some(old) = self.online.remove(principal) {
            self.sessions.remove(&old);
        }
        if self.sessions.len() >= self.config.max_sessions {
            return Err(RendezvousError::ServerFull(self.sessions.len()));
        }
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(
            id,
            SessionInfo {
                id,
                principal: principal.clone(),
                nat,
                opened_at: now,
                last_heartbeat: now,
            },
        );
        self.online.insert(principal.clone(), id);
        self.counters.peak_sessions = self.counters.peak_sessions.max(self.sessions.len() as u64);
        let flushed: Vec<Delivery> = self
            .offline_queue
            .remove(principal)
            .unwrap_or_default()
            .into_iter()
            .map(|env| Delivery {
                session: id,
                to: principal.clone(),
                env,
            })
            .collect();
        let n = flushed.len() as u64;
        self.emit(TraceEvent::new(now, "server", "rdv.login").with("principal", principal.to_string()).with("session", id).with("flushed", n));
        Ok(LoginOutcome { session: id, flushed })
    }

    pub fn logout(&mut self, session: u64, now: SimTime) -> Result<(), RendezvousError> {
        let info = self.sessions.remove(&session).ok_or(RendezvousError::UnknownSession(session))?;
        self.online.remove(&info.principal);
        self.emit(TraceEvent::new(now, "server", "rdv.logout").with("principal", info.principal.to_string()).with("session", session));
        Ok(())
    }

    pub fn heartbeat(&mut self, session: u64, now: SimTime) -> Result<(), RendezvousError> {
        let s = self.sessions.get_mut(&session).ok_or(RendezvousError::UnknownSession(session))?;
        s.last_heartbeat = now;
        self.counters.heartbeats += 1;
        Ok(())
    }

    /// Expires sessions silent for longer than the session timeout.
    pub fn sweep(&mut self, now: SimTime) -> Vec<Principal> {
        let timeout = self.config.session_timeout;
        let dead: Vec<u64> = self
            .sessions
            .values()
            .filter(|s| now.saturating_sub(s.last_heartbeat) > timeout)
            .map(|s| s.id)
            .collect();
        let mut out = Vec::new();
        for id in dead {
            let info = self.sessions.remove(&id).expect("listed above");
            self.online.remove(&info.principal);
            self.counters.dropped_sessions += 1;
            self.emit(TraceEvent::new(now, "server", "rdv.session_drop").with("principal", info.principal.to_string()).with("session", id));
            out.push(info.principal);
        }
        out
    }

    pub fn session(&self, id: u64) -> Option<&SessionInfo> {
        self.sessions.get(&id)
    }

    pub fn session_of(&self, p: &Principal) -> Option<&SessionInfo> {
        self.online.get(p).and_then(|id| self.sessions.get(id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn presence(&self, p: &Principal) -> Presence {
        if self.online.contains_key(p) {
            Presence::Online
        } else {
            Presence::Offline
        }
    }

    pub fn queued_for(&self, p: &Principal) -> usize {
        self.offline_queue.get(p).map_or(0, VecDeque::len)
    }

    pub fn decide_path(&self, payload_size: usize, a: NatType, b: NatType) -> PathDecision {
        decide_path(payload_size, a, b, self.config.size_threshold, self.config.punch_model)
    }

    /// Forwards `env` from the principal owning `session`. Duplicate
    /// `(from, msg_id)` pairs are discarded.
    pub fn relay(&mut self, session: u64, env: WanEnvelope, now: SimTime) -> Result<RelayOutcome, RendezvousError> {
        let sender = self.sessions.get(&session).ok_or(RendezvousError::UnknownSession(session))?.principal.clone();
        if env.from != sender {
            return Err(RendezvousError::Forbidden(format!("session of {sender} cannot send as {}", env.from)));
        }
        if !self.accounts.contains_key(&env.to) {
            return Err(RendezvousError::UnknownPrincipal(env.to.clone()));
        }
        if !self.dedup.entry(sender.clone()).or_default().accept(env.msg_id) {
            self.counters.duplicates += 1;
            self.emit(TraceEvent::new(now, "server", "relay.dup").with("from", sender.to_string()).with("msg_id", env.msg_id));
            return Ok(RelayOutcome::Duplicate);
        }
        self.counters.relayed_envelopes += 1;
        self.counters.relay_payload_bytes += env.wire_len() as u64;
        if let Some(&to_session) = self.online.get(&env.to) {
            let to = env.to.clone();
            return Ok(RelayOutcome::Delivered(Delivery {
                session: to_session,
                to,
                env,
            }));
        }
        let cap = self.config.offline_queue_cap;
        let to = env.to.clone();
        let q = self.offline_queue.entry(to.clone()).or_default();
        q.push_back(env);
        self.counters.queued += 1;
        let mut dropped = None;
        if q.len() > cap {
            dropped = q.pop_front();
        }
        let depth = q.len();
        if let Some(old) = dropped {
            self.counters.dropped_messages += 1;
            self.emit(TraceEvent::new(now, "server", "relay.drop")
                .with("to", to.to_string())
                .with("from", old.from.to_string())
                .with("msg_id", old.msg_id)
                .with("kind", old.kind.label()));
        }
        self.emit(TraceEvent::new(now, "server", "relay.queue").with("to", to.to_string()).with("depth", depth as u64));
        Ok(RelayOutcome::Queued { depth })
    }

    /// Puts an envelope whose recipient vanished while it was in flight
    /// back at the head of that recipient's offline queue.
    pub fn requeue(&mut self, env: WanEnvelope, now: SimTime) {
        let to = env.to.clone();
        let cap = self.config.offline_queue_cap;
        let q = self.offline_queue.entry(to.clone()).or_default();
        q.push_front(env);
        let dropped = if q.len() > cap { q.pop_back() } else { None };
        let depth = q.len() as u64;
        {
            if let Some(old) = dropped {
                self.counters.dropped_messages += 1;
                self.emit(TraceEvent::new(now, "server", "relay.drop")
                    .with("to", to.to_string())
                    .with("from", old.from.to_string())
                    .with("msg_id", old.msg_id)
                    .with("kind", old.kind.label()));
            }
        }
        self.emit(TraceEvent::new(now, "server", "relay.requeue").with("to", to.to_string()).with("depth", depth));
    }

    /// Exchanges observed endpoints between two online parties and
    /// simulates the punch. Only setup bytes are charged to the server.
    pub fn broker_p2p(&mut self, a: &Principal, b: &Principal, now: SimTime) -> Result<P2pChannel, RendezvousError> {
        let sa = self.session_of(a).ok_or_else(|| RendezvousError::Offline(a.clone()))?.clone();
        let sb = self.session_of(b).ok_or_else(|| RendezvousError::Offline(b.clone()))?.clone();
        self.counters.setup_bytes += (sa.nat.endpoint.len() + sb.nat.endpoint.len()) as u64 * 2;
        let ok = hole_punch_succeeds(self.config.punch_model, sa.nat.nat_type, sb.nat.nat_type);
        self.emit(TraceEvent::new(now, "server", "p2p.broker")
            .with("a", a.to_string())
            .with("b", b.to_string())
            .with("nat_a", sa.nat.nat_type.label())
            .with("nat_b", sb.nat.nat_type.label())
            .with("ok", ok));
        if !ok {
            self.counters.punch_failures += 1;
            return Err(RendezvousError::PunchFailed(sa.nat.nat_type, sb.nat.nat_type));
        }
        self.counters.p2p_channels += 1;
        Ok(P2pChannel {
            a: a.clone(),
            b: b.clone(),
            endpoint_a: sa.nat.endpoint,
            endpoint_b: sb.nat.endpoint,
        })
    }

    /// Records `a`'s request to add `b`. Returns true once the relation is
    /// mutual.
    pub fn add_contact(&mut self, a: &Principal, b: &Principal) -> Result<bool, RendezvousError> {
        if !self.accounts.contains_key(b) {
            return Err(RendezvousError::UnknownPrincipal(b.clone()));
        }
        let b_requested_a = {
            let acct_b = &self.accounts[b];
            acct_b.requested.contains(a) || acct_b.contacts.contains(a)
        };
        let acct_a = self.accounts.get_mut(a).ok_or_else(|| RendezvousError::UnknownPrincipal(a.clone()))?;
        if !b_requested_a {
            acct_a.requested.insert(b.clone());
            return Ok(false);
        }
        acct_a.requested.remove(b);
        acct_a.contacts.insert(b.clone());
        let acct_b = self.accounts.get_mut(b).expect("checked above");
        acct_b.requested.remove(a);
        acct_b.contacts.insert(a.clone());
        Ok(true)
    }

    pub fn are_contacts(&self, a: &Principal, b: &Principal) -> bool {
        self.accounts.get(a).is_some_and(|acct| acct.contacts.contains(b))
    }

    pub fn roster(&self, owner: &Principal) -> Result<Roster, RendezvousError> {
        let acct = self.accounts.get(owner).ok_or_else(|| RendezvousError::UnknownPrincipal(owner.clone()))?;
        Ok(Roster {
            owner: owner.clone(),
            contacts: acct.contacts.clone(),
            presence: acct.contacts.iter().map(|c| (c.clone(), self.presence(c))).collect(),
        })
    }

    /// Sends a chat line between mutual contacts. Large messages to an
    /// online peer go P2P when the punch succeeds; everything else is relayed.
    pub fn send_chat(&mut self, session: u64, to: &Principal, msg_id: u64, text: &str, now: SimTime) -> Result<ChatRoute, RendezvousError> {
        let from = self.sessions.get(&session).ok_or(RendezvousError::UnknownSession(session))?.clone();
        if !self.accounts.contains_key(to) {
            return Err(RendezvousError::UnknownPrincipal(to.clone()));
        }
        if !self.are_contacts(&from.principal, to) {
            return Err(RendezvousError::Forbidden(format!("{} and {to} are not contacts", from.principal)));
        }
        let env = WanEnvelope::new(
            msg_id,
            EnvelopeKind::Chat,
            from.principal.clone(),
            to.clone(),
            serde_json::json!({ "text": text }),
        );
        if let Some(peer) = self.session_of(to).cloned() {
            let d = self.decide_path(text.len(), from.nat.nat_type, peer.nat.nat_type);
            if d.decision == PathKind::P2pDirect {
                let ch = self.broker_p2p(&from.principal, to, now)?;
                let mut env = env;
                env.path = WanPath::P2p;
                return Ok(ChatRoute::P2p { channel: ch, env });
            }
        }
        self.relay(session, env, now).map(ChatRoute::Relay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatRoute {
    Relay(RelayOutcome),
    /// The envelope travels the brokered channel; the server never sees it.
    P2p { channel: P2pChannel, env: WanEnvelope },
}

/// Outcome of [`simulate_load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub users: usize,
    pub duration: SimTime,
    pub online_at_end: usize,
    pub login_failures: u64,
    pub counters: ServerCounters,
}

enum LoadEv {
    Login(usize),
    Heartbeat(usize),
    Sweep,
}

/// Logs `users` accounts in at random phases within the first heartbeat
/// interval, keeps each alive with heartbeats at the configured interval and
/// sweeps every `sweep_every`, for `duration` of simulated time.
pub fn simulate_load(config: RendezvousConfig, users: usize, duration: SimTime, sweep_every: SimTime, seed: u64) -> LoadReport {
    let mut server = RendezvousServer::new(config);
    let mut rng = SimRng::new(seed);
    let mut q = EventQueue::new();
    let mut sessions = vec![None; users];
    let mut login_failures = 0;
    let principals: Vec<Principal> = (0..users).map(|i| Principal::user(&format!("u{i}"))).collect();
    for p in &principals {
        server.register(p.clone(), "pw").expect("fresh account");
    }
    let spread = config.heartbeat_interval.as_micros().saturating_sub(1);
    for i in 0..users {
        q.schedule_in(SimTime(rng.draw_range(0, spread)), LoadEv::Login(i));
    }
    q.schedule_in(sweep_every, LoadEv::Sweep);
    while let Some((now, ev)) = q.pop_until(duration) {
        match ev {
            LoadEv::Login(i) => {
                let nat = NatProfile::new(NatType::ALL[i % NatType::ALL.len()], format!("203.0.113.{}:{}", i % 250, 10_000 + i));
                match server.login(&principals[i], "pw", nat, now) {
                    Ok(out) => {
                        sessions[i] = Some(out.session);
                        q.schedule_in(config.heartbeat_interval, LoadEv::Heartbeat(i));
                    }
                    Err(_) => login_failures += 1,
                }
            }
            LoadEv::Heartbeat(i) => {
                let alive = sessions[i].is_some_and(|s| server.heartbeat(s, now).is_ok());
                if alive {
                    q.schedule_in(config.heartbeat_interval, LoadEv::Heartbeat(i));
                }
            }
            LoadEv::Sweep => {
                for p in server.sweep(now) {
                    if let Some(i) = principals.iter().position(|x| *x == p) {
                        sessions[i] = None;
                    }
                }
                q.schedule_in(sweep_every, LoadEv::Sweep);
            }
        }
        server.drain_events();
    }
    LoadReport {
        users,
        duration,
        online_at_end: server.session_count(),
        login_failures,
        counters: server.counters(),
    }
}

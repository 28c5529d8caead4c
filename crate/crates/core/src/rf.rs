//! Physical layer of the 433MHz band: path loss, link budget, airtime and a
//! shared medium with collision semantics.
//!
//! Propagation is log-distance: free-space loss at 1m for the carrier, plus
//! `10·n·log10(d)`. The exponent `n` is calibrated per environment so that a
//! 20dBm transmitter reaches the −121dBm sensitivity floor at exactly the
//! rated range (1500m outdoors, 300m indoors).
//!
//! There is no capture effect and no fading: any two frames that overlap in
//! time at a receiver, both above sensitivity, destroy each other there.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{SimRng, SimTime};

pub const MIN_CHANNEL_MHZ: f64 = 240.0;
pub const MAX_CHANNEL_MHZ: f64 = 930.0;
pub const MIN_RATE_BPS: f64 = 123.0;
pub const MAX_RATE_BPS: f64 = 256_000.0;
pub const MAX_TX_POWER_DBM: f64 = 20.0;
pub const MIN_TX_POWER_DBM: f64 = -10.0;

pub const OUTDOOR_RANGE_M: f64 = 1500.0;
pub const INDOOR_RANGE_M: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RfError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("rate must be positive, got {0}")]
    ZeroRate(f64),
    #[error("channel {0} MHz outside 240..=930")]
    ChannelOutOfBand(f64),
    #[error("rate {0} bps outside 123..=256000")]
    RateOutOfRange(f64),
    #[error("tx power {0} dBm outside -10..=20")]
    TxPowerOutOfRange(f64),
    #[error("path loss exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error("node {0} is not registered on the medium")]
    UnregisteredNode(NodeId),
    #[error("unknown transmission {0:?}")]
    UnknownTx(TxId),
}

/// Radio front-end constants for one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioProfile {
    pub tx_power_dbm: f64,
    pub sensitivity_dbm: f64,
    pub rate_bps: f64,
    pub channel_mhz: f64,
    pub rx_current_ma: f64,
    pub tx_current_ma: f64,
    pub low_power_tx_mw: f64,
}

impl Default for RadioProfile {
    fn default() -> Self {
        RadioProfile {
            tx_power_dbm: 20.0,
            sensitivity_dbm: -121.0,
            rate_bps: 100_000.0,
            channel_mhz: 433.0,
            rx_current_ma: 18.5,
            tx_current_ma: 85.0,
            low_power_tx_mw: 1.0,
        }
    }
}

impl RadioProfile {
    pub fn validate(&self) -> Result<(), RfError> {
        if !(MIN_CHANNEL_MHZ..=MAX_CHANNEL_MHZ).contains(&self.channel_mhz) {
            return Err(RfError::ChannelOutOfBand(self.channel_mhz));
        }
        if !(MIN_RATE_BPS..=MAX_RATE_BPS).contains(&self.rate_bps) {
            return Err(RfError::RateOutOfRange(self.rate_bps));
        }
        if !(MIN_TX_POWER_DBM..=MAX_TX_POWER_DBM).contains(&self.tx_power_dbm) {
            return Err(RfError::TxPowerOutOfRange(self.tx_power_dbm));
        }
        Ok(())
    }

    /// Same radio at the low-power 1mW (0dBm) setting.
    pub fn low_power(mut self) -> Self {
        self.tx_power_dbm = 10.0 * self.low_power_tx_mw.log10();
        self
    }

    pub fn with_rate(mut self, rate_bps: f64) -> Self {
        self.rate_bps = rate_bps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Outdoor,
    Indoor,
}

impl EnvironmentKind {
    pub fn rated_range_m(self) -> f64 {
        match self {
            EnvironmentKind::Outdoor => OUTDOOR_RANGE_M,
            EnvironmentKind::Indoor => INDOOR_RANGE_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub kind: EnvironmentKind,
    pub path_loss_exponent: f64,
    pub reference_loss_db_at_1m: f64,
}

impl Environment {
    pub fn new(kind: EnvironmentKind, path_loss_exponent: f64, channel_mhz: f64) -> Result<Self, RfError> {
        if !(path_loss_exponent > 0.0) {
            return Err(RfError::BadExponent(path_loss_exponent));
        }
        Ok(Environment {
            kind,
            path_loss_exponent,
            reference_loss_db_at_1m: free_space_loss_db(1.0, channel_mhz),
        })
    }

    /// Exponent chosen so that `profile` closes the link with zero margin at
    /// the rated range of `kind`.
    pub fn calibrated(kind: EnvironmentKind, profile: &RadioProfile) -> Self {
        let budget = profile.tx_power_dbm - profile.sensitivity_dbm;
        let reference = free_space_loss_db(1.0, profile.channel_mhz);
        let n = (budget - reference) / (10.0 * kind.rated_range_m().log10());
        Environment {
            kind,
            path_loss_exponent: n,
            reference_loss_db_at_1m: reference,
        }
    }

    pub fn outdoor() -> Self {
        Self::calibrated(EnvironmentKind::Outdoor, &RadioProfile::default())
    }

    pub fn indoor() -> Self {
        Self::calibrated(EnvironmentKind::Indoor, &RadioProfile::default())
    }
}

/// Free-space path loss in dB: `32.45 + 20·log10(f_MHz) + 20·log10(d_km)`.
pub fn free_space_loss_db(distance_m: f64, channel_mhz: f64) -> f64 {
    32.45 + 20.0 * channel_mhz.log10() + 20.0 * (distance_m / 1000.0).log10()
}

pub fn path_loss(distance_m: f64, env: &Environment, channel_mhz: f64) -> Result<f64, RfError> {
    if !(distance_m > 0.0) {
        return Err(RfError::NonPositiveDistance(distance_m));
    }
    Ok(free_space_loss_db(1.0, channel_mhz) + 10.0 * env.path_loss_exponent * distance_m.log10())
}

/// `tx_power − path_loss − sensitivity`; non-negative means the link closes.
pub fn link_margin_db(distance_m: f64, env: &Environment, profile: &RadioProfile) -> Result<f64, RfError> {
    let loss = path_loss(distance_m, env, profile.channel_mhz)?;
    Ok(profile.tx_power_dbm - loss - profile.sensitivity_dbm)
}

pub fn link_closes(distance_m: f64, env: &Environment, profile: &RadioProfile) -> bool {
    link_margin_db(distance_m, env, profile).is_ok_and(|m| m >= 0.0)
}

/// Largest distance at which the link still closes.
pub fn max_range_m(env: &Environment, profile: &RadioProfile) -> f64 {
    let budget = profile.tx_power_dbm - profile.sensitivity_dbm - free_space_loss_db(1.0, profile.channel_mhz);
    10f64.powf(budget / (10.0 * env.path_loss_exponent))
}

/// Time on air for `n_bits` at `rate_bps`, rounded up to the microsecond.
pub fn airtime(n_bits: u64, rate_bps: f64) -> Result<SimTime, RfError> {
    if !(rate_bps > 0.0) {
        return Err(RfError::ZeroRate(rate_bps));
    }
    let us = n_bits as f64 * 1e6 / rate_bps;
    // Absorb float noise on exact quotients before rounding up.
    Ok(SimTime((us - 1e-6).ceil().max(0.0) as u64))
}

pub fn airtime_bytes(n_bytes: usize, rate_bps: f64) -> Result<SimTime, RfError> {
    airtime(n_bytes as u64 * 8, rate_bps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone)]
struct RadioNode {
    position: Position,
    profile: RadioProfile,
    listening_since: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct Transmission {
    pub id: TxId,
    pub src: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    pub channel_mhz: f64,
    pub tx_power_dbm: f64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxOutcome {
    Delivered,
    Corrupted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reception {
    pub node: NodeId,
    pub outcome: RxOutcome,
}

/// Shared channel state. Mutated only by the event loop.
#[derive(Debug)]
pub struct Medium {
    env: Environment,
    nodes: Vec<Option<RadioNode>>,
    txs: Vec<Transmission>,
    next_tx: u64,
    longest_airtime: SimTime,
    guard_horizon: SimTime,
    bit_error_probability: f64,
    rng: SimRng,
}

impl Medium {
    pub fn new(env: Environment, rng: SimRng) -> Self {
        Medium {
            env,
            nodes: Vec::new(),
            txs: Vec::new(),
            next_tx: 0,
            longest_airtime: SimTime::ZERO,
            guard_horizon: SimTime::from_millis(10),
            bit_error_probability: 0.0,
            rng,
        }
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    /// Independent per-frame loss applied after collision resolution.
    pub fn set_bit_error_probability(&mut self, p: f64) {
        self.bit_error_probability = p.clamp(0.0, 1.0);
    }

    /// Longest post-frame guard any caller will pass to [`Medium::carrier_busy`].
    pub fn set_guard_horizon(&mut self, guard: SimTime) {
        self.guard_horizon = guard;
    }

    pub fn register(&mut self, node: NodeId, position: Position, profile: RadioProfile) {
        let idx = node.0 as usize;
        if self.nodes.len() <= idx {
            self.nodes.resize(idx + 1, None);
        }
        self.nodes[idx] = Some(RadioNode {
            position,
            profile,
            listening_since: None,
        });
    }

    pub fn is_registered(&self, node: NodeId) -> bool {
        self.node(node).is_some()
    }

    fn node(&self, node: NodeId) -> Option<&RadioNode> {
        self.nodes.get(node.0 as usize).and_then(Option::as_ref)
    }

    pub fn profile(&self, node: NodeId) -> Option<&RadioProfile> {
        self.node(node).map(|n| &n.profile)
    }

    pub fn position(&self, node: NodeId) -> Option<Position> {
        self.node(node).map(|n| n.position)
    }

    /// Switches a node's receiver on (`Some(since)`) or off (`None`).
    pub fn set_listening(&mut self, node: NodeId, since: Option<SimTime>) {
        if let Some(Some(n)) = self.nodes.get_mut(node.0 as usize) {
            n.listening_since = since;
        }
    }

    pub fn is_listening(&self, node: NodeId) -> bool {
        self.node(node).is_some_and(|n| n.listening_since.is_some())
    }

    /// Received power at `rx` for a frame from `tx_node` sent at `tx_power`.
    fn rx_power(&self, tx_pos: Position, tx_power: f64, channel: f64, rx: &RadioNode) -> f64 {
        let d = tx_pos.distance(&rx.position).max(0.01);
        let loss = path_loss(d, &self.env, channel).expect("distance clamped positive");
        tx_power - loss
    }

    pub fn audible(&self, from: NodeId, to: NodeId) -> bool {
        match (self.node(from), self.node(to)) {
            (Some(a), Some(b)) => {
                self.rx_power(a.position, a.profile.tx_power_dbm, a.profile.channel_mhz, b) >= b.profile.sensitivity_dbm
            }
            _ => false,
        }
    }

    /// Puts `bytes` on the air from `src` starting at `start`.
    pub fn begin(&mut self, src: NodeId, bytes: Vec<u8>, start: SimTime) -> Result<&Transmission, RfError> {
        let node = self.node(src).ok_or(RfError::UnregisteredNode(src))?;
        let profile = node.profile;
        let duration = airtime_bytes(bytes.len(), profile.rate_bps)?;
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        self.longest_airtime = self.longest_airtime.max(duration);
        self.prune(start);
        self.txs.push(Transmission {
            id,
            src,
            start,
            end: start + duration,
            channel_mhz: profile.channel_mhz,
            tx_power_dbm: profile.tx_power_dbm,
            bytes,
        });
        Ok(self.txs.last().expect("just pushed"))
    }

    pub fn transmission(&self, id: TxId) -> Option<&Transmission> {
        self.txs.iter().find(|t| t.id == id)
    }

    fn prune(&mut self, now: SimTime) {
        let horizon = self.longest_airtime + self.guard_horizon + SimTime(1);
        self.txs.retain(|t| t.end + horizon > now);
    }

    /// Resolves a finished transmission: which listening receivers got it
    /// intact and which saw it corrupted by an overlapping frame.
    pub fn end(&mut self, id: TxId) -> Result<Vec<Reception>, RfError> {
        let tx = self.transmission(id).ok_or(RfError::UnknownTx(id))?.clone();
        let src_pos = self.node(tx.src).ok_or(RfError::UnregisteredNode(tx.src))?.position;
        let mut out = Vec::new();
        for (idx, slot) in self.nodes.iter().enumerate() {
            let Some(rx) = slot else { continue };
            let rx_id = NodeId(idx as u32);
            if rx_id == tx.src {
                continue;
            }
            if self.rx_power(src_pos, tx.tx_power_dbm, tx.channel_mhz, rx) < rx.profile.sensitivity_dbm {
                continue;
            }
            match rx.listening_since {
                Some(since) if since <= tx.start => {}
                _ => continue,
            }
            let collided = self.txs.iter().any(|o| {
                o.id != tx.id
                    && o.channel_mhz == tx.channel_mhz
                    && o.start < tx.end
                    && tx.start < o.end
                    && self.node(o.src).is_some_and(|onode| {
                        self.rx_power(onode.position, o.tx_power_dbm, o.channel_mhz, rx) >= rx.profile.sensitivity_dbm
                    })
            });
            let outcome = if collided { RxOutcome::Corrupted } else { RxOutcome::Delivered };
            out.push(Reception { node: rx_id, outcome });
        }
        if self.bit_error_probability > 0.0 {
            for r in out.iter_mut().filter(|r| r.outcome == RxOutcome::Delivered) {
                if self.rng.chance(self.bit_error_probability) {
                    r.outcome = RxOutcome::Corrupted;
                }
            }
        }
        Ok(out)
    }

    /// Carrier sense at `node` and instant `t`: busy while any audible frame
    /// is on the air or ended less than `guard` ago. A frame starting exactly
    /// at `t` is not yet detectable.
    pub fn carrier_busy(&self, node: NodeId, t: SimTime, guard: SimTime) -> bool {
        let Some(rx) = self.node(node) else { return false };
        self.txs.iter().any(|o| {
            o.src != node
                && o.start < t
                && t < o.end + guard
                && self.node(o.src).is_some_and(|onode| {
                    self.rx_power(onode.position, o.tx_power_dbm, o.channel_mhz, rx) >= rx.profile.sensitivity_dbm
                })
        })
    }

    /// Whether `node` itself has a frame on the air at `t`.
    pub fn transmitting(&self, node: NodeId, t: SimTime) -> bool {
        self.txs.iter().any(|o| o.src == node && o.start <= t && t < o.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn fspl_at_one_metre_433mhz() {
        let env = Environment::outdoor();
        let loss = path_loss(1.0, &env, 433.0).unwrap();
        assert_abs_diff_eq!(loss, 25.18, epsilon = 0.005);
    }

    #[test]
    fn calibrated_exponents() {
        assert_abs_diff_eq!(Environment::outdoor().path_loss_exponent, 3.65, epsilon = 0.005);
        assert_abs_diff_eq!(Environment::indoor().path_loss_exponent, 4.67, epsilon = 0.01);
    }

    #[test]
    fn rated_ranges_close_with_zero_margin() {
        let p = RadioProfile::default();
        let out = link_margin_db(1500.0, &Environment::outdoor(), &p).unwrap();
        let ind = link_margin_db(300.0, &Environment::indoor(), &p).unwrap();
        assert_abs_diff_eq!(out, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ind, 0.0, epsilon = 1e-9);
        let loss = path_loss(1500.0, &Environment::outdoor(), 433.0).unwrap();
        assert_abs_diff_eq!(loss, 141.0, epsilon = 1e-9);
    }

    #[test]
    fn non_positive_distance_is_rejected() {
        let env = Environment::outdoor();
        assert!(matches!(path_loss(0.0, &env, 433.0), Err(RfError::NonPositiveDistance(_))));
        assert!(matches!(path_loss(-3.0, &env, 433.0), Err(RfError::NonPositiveDistance(_))));
    }

    #[test]
    fn airtime_arithmetic() {
        assert_eq!(airtime(256, 256_000.0).unwrap(), SimTime::from_millis(1));
        assert_eq!(airtime(0, 10_000.0).unwrap(), SimTime::ZERO);
        let slow = airtime(1024, 123.0).unwrap();
        assert_abs_diff_eq!(slow.as_secs_f64(), 8.3252, epsilon = 5e-5);
        assert!(matches!(airtime(10, 0.0), Err(RfError::ZeroRate(_))));
    }

    #[test]
    fn profile_validation() {
        assert!(RadioProfile::default().validate().is_ok());
        let mut p = RadioProfile::default();
        p.channel_mhz = 2400.0;
        assert!(matches!(p.validate(), Err(RfError::ChannelOutOfBand(_))));
        let mut p = RadioProfile::default();
        p.tx_power_dbm = 27.0;
        assert!(matches!(p.validate(), Err(RfError::TxPowerOutOfRange(_))));
        let mut p = RadioProfile::default();
        p.rate_bps = 100.0;
        assert!(matches!(p.validate(), Err(RfError::RateOutOfRange(_))));
        assert_abs_diff_eq!(RadioProfile::default().low_power().tx_power_dbm, 0.0);
    }

    fn medium_with(positions: &[(u32, f64)]) -> Medium {
        let mut m = Medium::new(Environment::outdoor(), SimRng::new(1));
        for (id, x) in positions {
            m.register(NodeId(*id), Position::new(*x, 0.0), RadioProfile::default());
            m.set_listening(NodeId(*id), Some(SimTime::ZERO));
        }
        m
    }

    #[test]
    fn single_sender_delivers() {
        let mut m = medium_with(&[(0, 0.0), (1, 10.0)]);
        m.set_listening(NodeId(0), None);
        let id = m.begin(NodeId(0), vec![0; 20], SimTime(100)).unwrap().id;
        let rx = m.end(id).unwrap();
        assert_eq!(rx, vec![Reception { node: NodeId(1), outcome: RxOutcome::Delivered }]);
    }

    #[test]
    fn overlapping_frames_corrupt_each_other() {
        let mut m = medium_with(&[(0, 0.0), (1, 10.0), (2, 20.0)]);
        m.set_listening(NodeId(0), None);
        m.set_listening(NodeId(2), None);
        let a = m.begin(NodeId(0), vec![0; 20], SimTime(100)).unwrap().id;
        let b = m.begin(NodeId(2), vec![0; 20], SimTime(500)).unwrap().id;
        let ra = m.end(a).unwrap();
        let rb = m.end(b).unwrap();
        assert_eq!(ra, vec![Reception { node: NodeId(1), outcome: RxOutcome::Corrupted }]);
        assert_eq!(rb, vec![Reception { node: NodeId(1), outcome: RxOutcome::Corrupted }]);
    }

    #[test]
    fn out_of_range_receiver_gets_nothing() {
        let mut m = medium_with(&[(0, 0.0), (1, 1600.0)]);
        let id = m.begin(NodeId(0), vec![0; 20], SimTime(0)).unwrap().id;
        assert!(m.end(id).unwrap().is_empty());
    }

    #[test]
    fn unregistered_sender_is_an_error() {
        let mut m = medium_with(&[(0, 0.0)]);
        assert!(matches!(m.begin(NodeId(9), vec![1], SimTime(0)), Err(RfError::UnregisteredNode(_))));
    }

    #[test]
    fn carrier_sense_ignores_frames_starting_now() {
        let mut m = medium_with(&[(0, 0.0), (1, 10.0)]);
        m.begin(NodeId(0), vec![0; 20], SimTime(100)).unwrap();
        assert!(!m.carrier_busy(NodeId(1), SimTime(100), SimTime::ZERO));
        assert!(m.carrier_busy(NodeId(1), SimTime(101), SimTime::ZERO));
        assert!(!m.carrier_busy(NodeId(0), SimTime(101), SimTime::ZERO));
    }

    proptest! {
        #[test]
        fn delivery_iff_link_budget_closes(d in 1.0f64..3000.0) {
            let p = RadioProfile::default();
            let env = Environment::outdoor();
            let mut m = medium_with(&[(0, 0.0), (1, d)]);
            let id = m.begin(NodeId(0), vec![0; 16], SimTime(0)).unwrap().id;
            let delivered = m.end(id).unwrap().iter().any(|r| r.outcome == RxOutcome::Delivered);
            let budget = p.tx_power_dbm - path_loss(d, &env, p.channel_mhz).unwrap() >= p.sensitivity_dbm;
            prop_assert_eq!(delivered, budget);
        }

        #[test]
        fn range_is_monotone(d1 in 1.0f64..3000.0, d2 in 1.0f64..3000.0) {
            let (near, far) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let p = RadioProfile::default();
            let env = Environment::indoor();
            if link_closes(far, &env, &p) {
                prop_assert!(link_closes(near, &env, &p));
            }
            prop_assert!(path_loss(near, &env, 433.0).unwrap() <= path_loss(far, &env, 433.0).unwrap());
        }
    }
}

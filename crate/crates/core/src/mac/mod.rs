//! Medium access control: frame codec, superframe schedule with guaranteed
//! time slots, CSMA backoff parameters, receive-side de-duplication and the
//! per-device energy ledger.
//!
//! The state machines that drive these pieces live in [`crate::home`], which
//! owns the event loop.

pub mod energy;
pub mod frame;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rf::{airtime_bytes, RfError};
use crate::sim::{SimRng, SimTime};

pub use energy::{EnergyLedger, EnergyParams, RadioState};
pub use frame::{decode_frame, encode_frame, Frame, FrameError, FrameType};

/// Payload bytes of an ACK sent by the coordinator (frame-pending count).
pub const COORD_ACK_PAYLOAD: usize = 1;

/// Payload bytes of a beacon (net id, permit flag, superframe layout).
pub const BEACON_PAYLOAD: usize = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MacError {
    #[error("invalid MAC timings: {0}")]
    InvalidTimings(&'static str),
    #[error("no free GTS slots: requested {requested}, free {free}")]
    Capacity { requested: usize, free: usize },
    #[error("address {0:#04x} holds no GTS grant")]
    NoGrant(u8),
    #[error(transparent)]
    Rf(#[from] RfError),
}

/// Channel access discipline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacMode {
    /// Listen-before-talk, exponential backoff, ACK and retransmission.
    #[serde(alias = "selforg")]
    SelfOrganized,
    /// Transmit immediately; no carrier sense, no ACK.
    Naive,
}

impl MacMode {
    pub fn label(self) -> &'static str {
        match self {
            MacMode::SelfOrganized => "selforg",
            MacMode::Naive => "naive",
        }
    }
}

impl std::str::FromStr for MacMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "selforg" | "self_organized" => Ok(MacMode::SelfOrganized),
            "naive" => Ok(MacMode::Naive),
            other => Err(format!("unknown MAC mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacTimings {
    pub wake_latency: SimTime,
    pub discovery_latency: SimTime,
    pub join_latency: SimTime,
    /// Beacon interval. Passive scans wait half of it on average, so the
    /// default is twice the discovery latency.
    pub superframe_period: SimTime,
    pub slot_count: u32,
    pub gts_slot_count: u32,
    pub ack_timeout: SimTime,
    pub max_retries: u32,
    pub backoff_unit: SimTime,
    pub initial_window: u32,
    pub max_window: u32,
    /// Receive-to-transmit switch time before an ACK goes out.
    pub turnaround: SimTime,
    pub dedup_window: usize,
    pub scan_timeout: SimTime,
}

impl Default for MacTimings {
    fn default() -> Self {
        MacTimings {
            wake_latency: SimTime::from_millis(15),
            discovery_latency: SimTime::from_millis(30),
            join_latency: SimTime::from_millis(15),
            superframe_period: SimTime::from_millis(60),
            slot_count: 16,
            gts_slot_count: 4,
            ack_timeout: SimTime::from_millis(5),
            max_retries: 5,
            backoff_unit: SimTime::from_millis(1),
            initial_window: 8,
            max_window: 256,
            turnaround: SimTime::from_micros(500),
            dedup_window: 8,
            scan_timeout: SimTime::from_millis(500),
        }
    }
}

impl MacTimings {
    pub fn validate(&self) -> Result<(), MacError> {
        if self.gts_slot_count >= self.slot_count {
            return Err(MacError::InvalidTimings("gts_slot_count must be below slot_count"));
        }
        let durations = [
            self.wake_latency,
            self.discovery_latency,
            self.join_latency,
            self.superframe_period,
            self.ack_timeout,
            self.backoff_unit,
            self.turnaround,
            self.scan_timeout,
        ];
        if durations.iter().any(|d| *d == SimTime::ZERO) {
            return Err(MacError::InvalidTimings("all durations must be positive"));
        }
        if self.initial_window == 0 || self.max_window < self.initial_window {
            return Err(MacError::InvalidTimings("backoff windows must satisfy 0 < initial <= max"));
        }
        if self.superframe_period.as_micros() % self.slot_count as u64 != 0 {
            return Err(MacError::InvalidTimings("superframe period must divide evenly into slots"));
        }
        Ok(())
    }

    /// Time from the end of a unicast frame until its ACK has fully arrived.
    pub fn ack_guard(&self, rate_bps: f64) -> Result<SimTime, RfError> {
        let ack = airtime_bytes(frame::HEADER_LEN + COORD_ACK_PAYLOAD + frame::CRC_LEN, rate_bps)?;
        Ok(self.turnaround + ack)
    }

    /// Beacon airtime plus the carrier-sense guard that follows it; the
    /// contention period opens once it has elapsed.
    pub fn beacon_guard(&self, rate_bps: f64) -> Result<SimTime, RfError> {
        let beacon = airtime_bytes(frame::HEADER_LEN + BEACON_PAYLOAD + frame::CRC_LEN, rate_bps)?;
        Ok(beacon + self.ack_guard(rate_bps)?)
    }

    /// Checks that the ACK timeout leaves room for the ACK at `rate_bps` and
    /// that a maximum-size exchange fits in the contention period.
    pub fn validate_for_rate(&self, rate_bps: f64) -> Result<(), MacError> {
        self.validate()?;
        let ack_guard = self.ack_guard(rate_bps)?;
        if self.ack_timeout < ack_guard {
            return Err(MacError::InvalidTimings("ack_timeout shorter than turnaround plus ACK airtime"));
        }
        let sf = Superframe::new(self, SimTime::ZERO, self.beacon_guard(rate_bps)?);
        let exchange = airtime_bytes(frame::MAX_FRAME_LEN, rate_bps)? + ack_guard;
        if sf.cap_end(SimTime::ZERO) < sf.cap_start(SimTime::ZERO) + exchange {
            return Err(MacError::InvalidTimings("contention period too short for a full-size frame at this rate"));
        }
        Ok(())
    }

    /// Contention window for the given retry and busy-channel counts.
    pub fn window(&self, retries: u32, busy: u32) -> u32 {
        let shift = (retries + busy).min(16);
        self.initial_window.saturating_mul(1 << shift).min(self.max_window)
    }

    pub fn draw_backoff(&self, rng: &mut SimRng, retries: u32, busy: u32) -> SimTime {
        let w = self.window(retries, busy) as u64;
        self.backoff_unit.mul(rng.draw_range(0, w - 1))
    }
}

/// Beacon-delimited schedule: a contention access period (CAP) followed by
/// `gts_slot_count` guaranteed slots at the end of each superframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superframe {
    pub origin: SimTime,
    pub period: SimTime,
    pub slot_count: u32,
    pub gts_slot_count: u32,
    /// Beacon airtime plus turnaround; contention starts after it.
    pub beacon_guard: SimTime,
}

impl Superframe {
    pub fn new(timings: &MacTimings, origin: SimTime, beacon_guard: SimTime) -> Self {
        Superframe {
            origin,
            period: timings.superframe_period,
            slot_count: timings.slot_count,
            gts_slot_count: timings.gts_slot_count,
            beacon_guard,
        }
    }

    pub fn slot_len(&self) -> SimTime {
        SimTime(self.period.as_micros() / self.slot_count as u64)
    }

    /// Start of the superframe containing `t` (superframes before the origin
    /// do not exist; `t < origin` maps to the origin).
    pub fn start_of(&self, t: SimTime) -> SimTime {
        if t < self.origin {
            return self.origin;
        }
        let k = (t - self.origin).as_micros() / self.period.as_micros();
        self.origin + self.period.mul(k)
    }

    pub fn cap_start(&self, sf_start: SimTime) -> SimTime {
        sf_start + self.beacon_guard
    }

    pub fn cap_end(&self, sf_start: SimTime) -> SimTime {
        sf_start + self.slot_len().mul((self.slot_count - self.gts_slot_count) as u64)
    }

    /// Whether an exchange of length `dur` starting at `t` fits inside a CAP.
    pub fn fits_in_cap(&self, t: SimTime, dur: SimTime) -> bool {
        if t < self.origin {
            return false;
        }
        let sf = self.start_of(t);
        t >= self.cap_start(sf) && t + dur <= self.cap_end(sf)
    }

    /// Earliest CAP start strictly usable at or after `t`.
    pub fn next_cap_start(&self, t: SimTime) -> SimTime {
        let sf = self.start_of(t);
        let cap = self.cap_start(sf);
        if t <= cap && t >= self.origin {
            cap
        } else {
            self.cap_start(sf + self.period)
        }
    }

    /// `[start, end)` of GTS slot `index` (0-based within the CFP) in the
    /// superframe starting at `sf_start`.
    pub fn gts_window(&self, sf_start: SimTime, index: u32) -> (SimTime, SimTime) {
        let first = self.slot_count - self.gts_slot_count;
        let start = sf_start + self.slot_len().mul((first + index) as u64);
        (start, start + self.slot_len())
    }

    pub fn next_superframe(&self, t: SimTime) -> SimTime {
        self.start_of(t) + self.period
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtsGrant {
    pub addr: u8,
    /// CFP slot indices, ascending.
    pub slots: Vec<u32>,
}

/// Allocation table for guaranteed slots.
#[derive(Debug, Clone)]
pub struct GtsTable {
    owners: Vec<Option<u8>>,
}

impl GtsTable {
    pub fn new(gts_slot_count: u32) -> Self {
        GtsTable {
            owners: vec![None; gts_slot_count as usize],
        }
    }

    pub fn free(&self) -> usize {
        self.owners.iter().filter(|o| o.is_none()).count()
    }

    pub fn reserve(&mut self, addr: u8, slots: usize) -> Result<GtsGrant, MacError> {
        let free = self.free();
        if slots == 0 || slots > free {
            return Err(MacError::Capacity { requested: slots, free });
        }
        let mut granted = Vec::with_capacity(slots);
        for (i, owner) in self.owners.iter_mut().enumerate() {
            if granted.len() == slots {
                break;
            }
            if owner.is_none() {
                *owner = Some(addr);
                granted.push(i as u32);
            }
        }
        Ok(GtsGrant { addr, slots: granted })
    }

    pub fn release(&mut self, addr: u8) -> Result<usize, MacError> {
        let mut n = 0;
        for owner in self.owners.iter_mut().filter(|o| **o == Some(addr)) {
            *owner = None;
            n += 1;
        }
        if n == 0 {
            return Err(MacError::NoGrant(addr));
        }
        Ok(n)
    }

    pub fn owner(&self, slot: u32) -> Option<u8> {
        self.owners.get(slot as usize).copied().flatten()
    }

    pub fn grant_of(&self, addr: u8) -> Option<GtsGrant> {
        let slots: Vec<u32> = (0..self.owners.len() as u32).filter(|i| self.owner(*i) == Some(addr)).collect();
        (!slots.is_empty()).then_some(GtsGrant { addr, slots })
    }
}

/// Receiver-side duplicate filter keyed by `(net_id, src)`, remembering the
/// last `window` sequence numbers from each sender.
#[derive(Debug, Clone)]
pub struct DedupWindow {
    window: usize,
    seen: HashMap<(u16, u8), VecDeque<u8>>,
}

impl DedupWindow {
    pub fn new(window: usize) -> Self {
        DedupWindow {
            window: window.max(1),
            seen: HashMap::new(),
        }
    }

    /// True when `(net_id, src, seq)` has not been seen within the window.
    pub fn accept(&mut self, net_id: u16, src: u8, seq: u8) -> bool {
        let q = self.seen.entry((net_id, src)).or_default();
        if q.contains(&seq) {
            return false;
        }
        if q.len() == self.window {
            q.pop_front();
        }
        q.push_back(seq);
        true
    }

    pub fn forget(&mut self, net_id: u16, src: u8) {
        self.seen.remove(&(net_id, src));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_timings_are_valid() {
        let t = MacTimings::default();
        t.validate_for_rate(100_000.0).unwrap();
        assert_eq!(t.wake_latency, SimTime::from_millis(15));
        assert_eq!(t.discovery_latency, SimTime::from_millis(30));
        assert_eq!(t.join_latency, SimTime::from_millis(15));
    }

    #[test]
    fn ack_timeout_must_cover_slow_rates() {
        let t = MacTimings::default();
        assert!(matches!(t.validate_for_rate(10_000.0), Err(MacError::InvalidTimings(_))));
    }

    #[test]
    fn invalid_gts_count() {
        let t = MacTimings {
            gts_slot_count: 16,
            ..MacTimings::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn window_doubles_and_caps() {
        let t = MacTimings::default();
        assert_eq!(t.window(0, 0), 8);
        assert_eq!(t.window(1, 0), 16);
        assert_eq!(t.window(2, 1), 64);
        assert_eq!(t.window(5, 0), 256);
        assert_eq!(t.window(9, 9), 256);
    }

    #[test]
    fn gts_capacity() {
        let mut g = GtsTable::new(4);
        assert_eq!(g.reserve(0x01, 1).unwrap().slots, vec![0]);
        assert_eq!(g.reserve(0x02, 2).unwrap().slots, vec![1, 2]);
        assert_eq!(g.reserve(0x03, 1).unwrap().slots, vec![3]);
        assert_eq!(g.reserve(0x04, 1), Err(MacError::Capacity { requested: 1, free: 0 }));
        assert_eq!(g.release(0x02).unwrap(), 2);
        assert_eq!(g.reserve(0x04, 1).unwrap().slots, vec![1]);
        assert_eq!(g.release(0x77), Err(MacError::NoGrant(0x77)));
    }

    #[test]
    fn superframe_geometry() {
        let t = MacTimings::default();
        let sf = Superframe::new(&t, SimTime::ZERO, SimTime::from_millis(2));
        assert_eq!(sf.slot_len(), SimTime::from_micros(3750));
        assert_eq!(sf.cap_end(SimTime::ZERO), SimTime::from_millis(45));
        assert_eq!(sf.gts_window(SimTime::from_millis(60), 0), (SimTime::from_millis(105), SimTime::from_micros(108_750)));
        assert!(sf.fits_in_cap(SimTime::from_millis(10), SimTime::from_millis(5)));
        assert!(!sf.fits_in_cap(SimTime::from_millis(42), SimTime::from_millis(5)));
        assert!(!sf.fits_in_cap(SimTime::from_millis(1), SimTime::from_millis(1)));
        assert_eq!(sf.next_cap_start(SimTime::from_millis(46)), SimTime::from_millis(62));
        assert_eq!(sf.next_cap_start(SimTime::from_millis(1)), SimTime::from_millis(2));
    }

    #[test]
    fn dedup_window_forgets_old_sequence_numbers() {
        let mut d = DedupWindow::new(8);
        assert!(d.accept(1, 5, 0));
        assert!(!d.accept(1, 5, 0));
        assert!(d.accept(1, 6, 0));
        assert!(d.accept(2, 5, 0));
        for s in 1..=8 {
            assert!(d.accept(1, 5, s));
        }
        // seq 0 fell out of the 8-entry window
        assert!(d.accept(1, 5, 0));
    }
}

//! Star network layer: one coordinator at address 0x00 and up to 254 slaves
//! at 0x01..=0xFE, assigned lowest-free. Downlink to sleeping slaves goes
//! through a per-address indirect queue drained when the slave polls.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceDescriptor;
use crate::mac::frame::{COORDINATOR_ADDR, FIRST_SLAVE_ADDR, LAST_SLAVE_ADDR};
use crate::mac::BEACON_PAYLOAD;
use crate::sim::SimTime;

pub const MAX_SLAVES: usize = (LAST_SLAVE_ADDR - FIRST_SLAVE_ADDR + 1) as usize;
pub const DEFAULT_INDIRECT_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("network full: {0} slaves already joined")]
    Capacity(usize),
    #[error("no device at address {0:#04x}")]
    UnknownDevice(u8),
    #[error("indirect queue for {0:#04x} is full")]
    Busy(u8),
    #[error("the coordinator cannot be evicted")]
    CoordinatorNotEvictable,
    #[error("no beacon heard")]
    NoNetwork,
    #[error("join not acknowledged")]
    JoinTimeout,
    #[error("joining is not permitted on this network")]
    JoinNotPermitted,
    #[error("malformed {0} payload")]
    Malformed(&'static str),
}

/// A downlink payload waiting for its slave to poll.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDownlink {
    pub payload: Vec<u8>,
    pub seq: u8,
    pub queued_at: SimTime,
    /// Gateway command id this payload belongs to, if any.
    pub tag: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct NetworkRegistry {
    net_id: u16,
    permit_join: bool,
    slaves: BTreeMap<u8, DeviceDescriptor>,
    by_device: HashMap<u64, u8>,
    indirect: HashMap<u8, VecDeque<PendingDownlink>>,
    indirect_cap: usize,
}

impl NetworkRegistry {
    pub fn new(net_id: u16) -> Self {
        NetworkRegistry {
            net_id,
            permit_join: true,
            slaves: BTreeMap::new(),
            by_device: HashMap::new(),
            indirect: HashMap::new(),
            indirect_cap: DEFAULT_INDIRECT_CAP,
        }
    }

    pub fn with_indirect_cap(mut self, cap: usize) -> Self {
        self.indirect_cap = cap;
        self
    }

    pub fn net_id(&self) -> u16 {
        self.net_id
    }

    pub fn coordinator_addr(&self) -> u8 {
        COORDINATOR_ADDR
    }

    pub fn permit_join(&self) -> bool {
        self.permit_join
    }

    pub fn set_permit_join(&mut self, permit: bool) {
        self.permit_join = permit;
    }

    pub fn len(&self) -> usize {
        self.slaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slaves.is_empty()
    }

    pub fn get(&self, addr: u8) -> Option<&DeviceDescriptor> {
        self.slaves.get(&addr)
    }

    pub fn contains(&self, addr: u8) -> bool {
        self.slaves.contains_key(&addr)
    }

    pub fn addr_of(&self, device_id: u64) -> Option<u8> {
        self.by_device.get(&device_id).copied()
    }

    pub fn slaves(&self) -> impl Iterator<Item = (u8, &DeviceDescriptor)> {
        self.slaves.iter().map(|(a, d)| (*a, d))
    }

    /// Admits `device` at the lowest free address. A device that is already
    /// a member gets its existing address back (lost JOIN_ACK retries).
    pub fn join(&mut self, mut device: DeviceDescriptor) -> Result<u8, NetError> {
        if let Some(addr) = self.by_device.get(&device.device_id) {
            return Ok(*addr);
        }
        if !self.permit_join {
            return Err(NetError::JoinNotPermitted);
        }
        if self.slaves.len() >= MAX_SLAVES {
            return Err(NetError::Capacity(self.slaves.len()));
        }
        let addr = (FIRST_SLAVE_ADDR..=LAST_SLAVE_ADDR)
            .find(|a| !self.slaves.contains_key(a))
            .expect("fewer than 254 slaves leaves a free address");
        device.addr = Some(addr);
        self.by_device.insert(device.device_id, addr);
        self.slaves.insert(addr, device);
        Ok(addr)
    }

    /// Removes a slave; returns the indirect payloads that were dropped.
    pub fn evict(&mut self, addr: u8) -> Result<Vec<PendingDownlink>, NetError> {
        if addr == COORDINATOR_ADDR {
            return Err(NetError::CoordinatorNotEvictable);
        }
        let device = self.slaves.remove(&addr).ok_or(NetError::UnknownDevice(addr))?;
        self.by_device.remove(&device.device_id);
        Ok(self.indirect.remove(&addr).map(Vec::from).unwrap_or_default())
    }

    pub fn enqueue_indirect(&mut self, addr: u8, item: PendingDownlink) -> Result<usize, NetError> {
        if !self.slaves.contains_key(&addr) {
            return Err(NetError::UnknownDevice(addr));
        }
        let q = self.indirect.entry(addr).or_default();
        if q.len() >= self.indirect_cap {
            return Err(NetError::Busy(addr));
        }
        q.push_back(item);
        Ok(q.len())
    }

    pub fn pending(&self, addr: u8) -> usize {
        self.indirect.get(&addr).map_or(0, VecDeque::len)
    }

    pub fn peek_indirect(&self, addr: u8) -> Option<&PendingDownlink> {
        self.indirect.get(&addr).and_then(VecDeque::front)
    }

    pub fn pop_indirect(&mut self, addr: u8) -> Option<PendingDownlink> {
        self.indirect.get_mut(&addr).and_then(VecDeque::pop_front)
    }
}

/// Contents of a BEACON payload (6 bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconInfo {
    pub net_id: u16,
    pub permit_join: bool,
    pub superframe_ms: u16,
    pub slot_count: u8,
    pub gts_slot_count: u8,
}

impl BeaconInfo {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(BEACON_PAYLOAD);
        v.extend_from_slice(&self.net_id.to_be_bytes());
        v.push(self.permit_join as u8);
        v.extend_from_slice(&self.superframe_ms.to_be_bytes());
        v.push(self.slot_count);
        v.push(self.gts_slot_count);
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, NetError> {
        if b.len() != BEACON_PAYLOAD {
            return Err(NetError::Malformed("beacon"));
        }
        Ok(BeaconInfo {
            net_id: u16::from_be_bytes([b[0], b[1]]),
            permit_join: b[2] != 0,
            superframe_ms: u16::from_be_bytes([b[3], b[4]]),
            slot_count: b[5],
            gts_slot_count: b[6],
        })
    }
}

/// JOIN_REQ payload: device id (8, big-endian) and kind (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinRequest {
    pub device_id: u64,
    pub kind: u8,
}

impl JoinRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = self.device_id.to_be_bytes().to_vec();
        v.push(self.kind);
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, NetError> {
        if b.len() != 9 {
            return Err(NetError::Malformed("join request"));
        }
        Ok(JoinRequest {
            device_id: u64::from_be_bytes(b[..8].try_into().expect("8 bytes")),
            kind: b[8],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum JoinStatus {
    Accepted = 0,
    Capacity = 1,
    NotPermitted = 2,
}

/// JOIN_ACK payload: device id (8), assigned address (1), status (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinAck {
    pub device_id: u64,
    pub addr: u8,
    pub status: JoinStatus,
}

impl JoinAck {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = self.device_id.to_be_bytes().to_vec();
        v.push(self.addr);
        v.push(self.status as u8);
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, NetError> {
        if b.len() != 10 {
            return Err(NetError::Malformed("join ack"));
        }
        let status = match b[9] {
            0 => JoinStatus::Accepted,
            1 => JoinStatus::Capacity,
            2 => JoinStatus::NotPermitted,
            _ => return Err(NetError::Malformed("join ack")),
        };
        Ok(JoinAck {
            device_id: u64::from_be_bytes(b[..8].try_into().expect("8 bytes")),
            addr: b[8],
            status,
        })
    }
}

//! WAN envelopes exchanged between clients, the rendezvous server and the
//! gateway, plus the length-prefixed wire framing used on TCP.
//!
//! Wire framing: a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON encoding one [`WanEnvelope`].

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::device::DeviceMessage;

/// Frames larger than this are rejected before allocation.
pub const MAX_WIRE_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WanError {
    #[error("integrity tag missing or invalid")]
    Integrity,
    #[error("wire frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
    #[error("invalid envelope JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid principal `{0}`")]
    BadPrincipal(String),
    #[error("invalid TLV hex: {0}")]
    BadHex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvelopeKind {
    Cmd,
    CmdAck,
    Report,
    Alarm,
    Admin,
    Chat,
    CamCtrl,
    CamData,
    Auth,
}

impl EnvelopeKind {
    pub fn label(self) -> &'static str {
        match self {
            EnvelopeKind::Cmd => "CMD",
            EnvelopeKind::CmdAck => "CMD_ACK",
            EnvelopeKind::Report => "REPORT",
            EnvelopeKind::Alarm => "ALARM",
            EnvelopeKind::Admin => "ADMIN",
            EnvelopeKind::Chat => "CHAT",
            EnvelopeKind::CamCtrl => "CAM_CTRL",
            EnvelopeKind::CamData => "CAM_DATA",
            EnvelopeKind::Auth => "AUTH",
        }
    }
}

/// Addressable party on the WAN. Serialized as `user:<name>`,
/// `gateway:<name>`, `camera:<name>`, `device:<addr>` or `server`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Principal {
    User(String),
    Gateway(String),
    Camera(String),
    Device(u8),
    Server,
}

impl Principal {
    pub fn user(name: &str) -> Self {
        Principal::User(name.to_string())
    }

    pub fn gateway(name: &str) -> Self {
        Principal::Gateway(name.to_string())
    }

    pub fn camera(name: &str) -> Self {
        Principal::Camera(name.to_string())
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::User(n) => write!(f, "user:{n}"),
            Principal::Gateway(n) => write!(f, "gateway:{n}"),
            Principal::Camera(n) => write!(f, "camera:{n}"),
            Principal::Device(a) => write!(f, "device:{a}"),
            Principal::Server => f.write_str("server"),
        }
    }
}

impl FromStr for Principal {
    type Err = WanError;
    fn from_str(s: &str) -> Result<Self, WanError> {
        let bad = || WanError::BadPrincipal(s.to_string());
        if s == "server" {
            return Ok(Principal::Server);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match kind {
            "user" => Ok(Principal::User(rest.to_string())),
            "gateway" => Ok(Principal::Gateway(rest.to_string())),
            "camera" => Ok(Principal::Camera(rest.to_string())),
            "device" => rest.parse().map(Principal::Device).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Principal {
    type Error = WanError;
    fn try_from(s: String) -> Result<Self, WanError> {
        s.parse()
    }
}

impl From<Principal> for String {
    fn from(p: Principal) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WanPath {
    #[default]
    Relay,
    P2p,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WanEnvelope {
    pub msg_id: u64,
    pub kind: EnvelopeKind,
    pub from: Principal,
    pub to: Principal,
    pub payload: serde_json::Value,
    #[serde(default)]
    pub path: WanPath,
    /// Hex HMAC-SHA256 over the canonical JSON of the envelope with this
    /// field absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl WanEnvelope {
    pub fn new(msg_id: u64, kind: EnvelopeKind, from: Principal, to: Principal, payload: serde_json::Value) -> Self {
        WanEnvelope {
            msg_id,
            kind,
            from,
            to,
            payload,
            path: WanPath::Relay,
            tag: None,
        }
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("envelope is always serializable");
        serde_json::to_string(&v).expect("value is always serializable")
    }

    fn mac_input(&self) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.tag = None;
        unsigned.to_json().into_bytes()
    }

    fn hmac(key: &[u8]) -> Hmac<Sha256> {
        <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length")
    }

    pub fn sign(&mut self, key: &[u8]) {
        let mut mac = Self::hmac(key);
        mac.update(&self.mac_input());
        self.tag = Some(hex::encode(mac.finalize().into_bytes()));
    }

    pub fn signed(mut self, key: &[u8]) -> Self {
        self.sign(key);
        self
    }

    pub fn verify(&self, key: &[u8]) -> Result<(), WanError> {
        let tag = self.tag.as_deref().ok_or(WanError::Integrity)?;
        let raw = hex::decode(tag).map_err(|_| WanError::Integrity)?;
        let mut mac = Self::hmac(key);
        mac.update(&self.mac_input());
        mac.verify_slice(&raw).map_err(|_| WanError::Integrity)
    }

    /// Approximate on-the-wire size, used for relay byte accounting.
    pub fn wire_len(&self) -> usize {
        4 + self.to_json().len()
    }
}

pub fn encode_wire(env: &WanEnvelope) -> Vec<u8> {
    let json = env.to_json();
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(json.as_bytes());
    out
}

/// Decodes one frame from the front of `buf`; returns the envelope and the
/// number of bytes consumed, or `Ok(None)` if more bytes are needed.
pub fn decode_wire(buf: &[u8]) -> Result<Option<(WanEnvelope, usize)>, WanError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_WIRE_LEN {
        return Err(WanError::FrameTooLarge(len));
    }
    if buf.len() < 4 + len {
        return Ok(None);
    }
    let env = serde_json::from_slice(&buf[4..4 + len])?;
    Ok(Some((env, 4 + len)))
}

/// Incremental decoder for a byte stream carrying wire frames.
#[derive(Debug, Default)]
pub struct WireDecoder {
    buf: Vec<u8>,
}

impl WireDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_envelope(&mut self) -> Result<Option<WanEnvelope>, WanError> {
        match decode_wire(&self.buf)? {
            Some((env, used)) => {
                self.buf.drain(..used);
                Ok(Some(env))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

// Kind-specific payload documents.

/// `CMD`: a TLV for the device at `addr`, hex encoded so the bytes pass
/// through untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmdPayload {
    pub addr: u8,
    pub tlv: String,
}

impl CmdPayload {
    pub fn new(addr: u8, msg: &DeviceMessage) -> Self {
        CmdPayload {
            addr,
            tlv: hex::encode(msg.encode().expect("command TLV within limits")),
        }
    }

    pub fn tlv_bytes(&self) -> Result<Vec<u8>, WanError> {
        hex::decode(&self.tlv).map_err(|e| WanError::BadHex(e.to_string()))
    }
}

/// `CMD_ACK`: outcome of the command whose envelope id is `cmd_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmdAckPayload {
    pub cmd_id: u64,
    pub addr: u8,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Acknowledging REPORT TLV from the device, hex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

/// `ALARM`: one alarm raised by a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmPayload {
    pub alarm_id: u64,
    pub addr: u8,
    pub kind: u8,
    pub rule: u8,
    /// Seq of the MAC frame that carried the alarm.
    pub seq: u8,
    pub raised_at_us: u64,
    pub tlv: String,
}

/// `ALARM` envelope body; poll-mode deliveries batch several alarms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmBatch {
    pub alarms: Vec<AlarmPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub addr: u8,
    pub tlv: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::TlvType;
    use serde_json::json;

    fn env() -> WanEnvelope {
        WanEnvelope::new(
            7,
            EnvelopeKind::Cmd,
            Principal::user("alice"),
            Principal::gateway("home"),
            serde_json::to_value(CmdPayload::new(3, &DeviceMessage::new(TlvType::SetActuator, vec![1]))).unwrap(),
        )
    }

    #[test]
    fn principal_strings() {
        for p in [Principal::user("a"), Principal::gateway("g"), Principal::camera("c"), Principal::Device(7), Principal::Server] {
            assert_eq!(p.to_string().parse::<Principal>().unwrap(), p);
        }
        assert!("device:300".parse::<Principal>().is_err());
        assert!("user:".parse::<Principal>().is_err());
        assert!("robot:x".parse::<Principal>().is_err());
    }

    #[test]
    fn json_shape() {
        let v: serde_json::Value = serde_json::from_str(&env().to_json()).unwrap();
        assert_eq!(
            v,
            json!({"msg_id": 7, "kind": "CMD", "from": "user:alice", "to": "gateway:home",
                   "payload": {"addr": 3, "tlv": "010101"}, "path": "relay"})
        );
    }

    #[test]
    fn signed_envelope_verifies() {
        let e = env().signed(b"k");
        e.verify(b"k").unwrap();
        assert!(matches!(e.verify(b"other"), Err(WanError::Integrity)));
        assert!(matches!(env().verify(b"k"), Err(WanError::Integrity)));
    }

    #[test]
    fn tampered_payload_fails_integrity() {
        let mut e = env().signed(b"k");
        e.payload["tlv"] = json!("010100");
        assert!(matches!(e.verify(b"k"), Err(WanError::Integrity)));
    }

    #[test]
    fn wire_round_trip_and_streaming() {
        let a = env();
        let mut b = env().signed(b"x");
        b.msg_id = 8;
        let mut bytes = encode_wire(&a);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len() - 4);
        bytes.extend(encode_wire(&b));
        let mut dec = WireDecoder::new();
        dec.push(&bytes[..5]);
        assert!(dec.next_envelope().unwrap().is_none());
        dec.push(&bytes[5..]);
        assert_eq!(dec.next_envelope().unwrap().unwrap(), a);
        assert_eq!(dec.next_envelope().unwrap().unwrap(), b);
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn oversized_frame_rejected() {
        let bytes = (MAX_WIRE_LEN as u32 + 1).to_be_bytes();
        assert!(matches!(decode_wire(&bytes), Err(WanError::FrameTooLarge(_))));
    }
}

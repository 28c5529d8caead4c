//! TLV payloads carried inside DATA frames.
//!
//! Every device message is a single TLV: `type (1) | length (1) | value`.
//! Value layouts:
//!
//! | type            | value                                              |
//! |-----------------|----------------------------------------------------|
//! | `SET_ACTUATOR`  | settable fields of the kind, in table order        |
//! | `QUERY_STATE`   | empty                                              |
//! | `REPORT`        | `kind, cause, ref_seq, fields...`                  |
//! | `ALARM`         | `kind, rule, fields...`                            |
//!
//! `cause` is 0 for periodic reports, 1 for a command acknowledgment and 2
//! for a query response; `ref_seq` is the MAC sequence number of the frame
//! that carried the command (0 for periodic reports). Field widths and
//! ranges come from the kind's codec table (see [`super::KindSpec`]);
//! 2-byte fields are big-endian.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TlvType {
    SetActuator = 0x01,
    QueryState = 0x02,
    Report = 0x03,
    Alarm = 0x04,
}

impl TryFrom<u8> for TlvType {
    type Error = TlvError;
    fn try_from(v: u8) -> Result<Self, TlvError> {
        Ok(match v {
            0x01 => TlvType::SetActuator,
            0x02 => TlvType::QueryState,
            0x03 => TlvType::Report,
            0x04 => TlvType::Alarm,
            other => return Err(TlvError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TlvError {
    #[error("empty or truncated TLV ({0} bytes)")]
    Truncated(usize),
    #[error("TLV length {declared} but {actual} value bytes follow")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown TLV type {0:#04x}")]
    UnknownType(u8),
    #[error("value too long ({0} bytes)")]
    TooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
#[serde(rename_all = "snake_case")]
pub enum ReportCause {
    Periodic = 0,
    CommandAck = 1,
    QueryResponse = 2,
}

impl ReportCause {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ReportCause::Periodic),
            1 => Some(ReportCause::CommandAck),
            2 => Some(ReportCause::QueryResponse),
            _ => None,
        }
    }
}

/// Largest TLV value that still fits a frame payload.
pub const MAX_VALUE_LEN: usize = 62;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceMessage {
    pub tlv_type: TlvType,
    pub value: Vec<u8>,
}

impl DeviceMessage {
    pub fn new(tlv_type: TlvType, value: Vec<u8>) -> Self {
        DeviceMessage { tlv_type, value }
    }

    pub fn encode(&self) -> Result<Vec<u8>, TlvError> {
        if self.value.len() > MAX_VALUE_LEN {
            return Err(TlvError::TooLong(self.value.len()));
        }
        let mut out = Vec::with_capacity(2 + self.value.len());
        out.push(self.tlv_type as u8);
        out.push(self.value.len() as u8);
        out.extend_from_slice(&self.value);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TlvError> {
        if bytes.len() < 2 {
            return Err(TlvError::Truncated(bytes.len()));
        }
        let tlv_type = TlvType::try_from(bytes[0])?;
        let declared = bytes[1] as usize;
        let actual = bytes.len() - 2;
        if declared != actual {
            return Err(TlvError::LengthMismatch { declared, actual });
        }
        Ok(DeviceMessage {
            tlv_type,
            value: bytes[2..].to_vec(),
        })
    }

    /// `(kind, cause, ref_seq)` of a REPORT.
    pub fn report_header(&self) -> Option<(u8, ReportCause, u8)> {
        if self.tlv_type != TlvType::Report || self.value.len() < 3 {
            return None;
        }
        Some((self.value[0], ReportCause::from_u8(self.value[1])?, self.value[2]))
    }

    /// `(kind, rule)` of an ALARM.
    pub fn alarm_header(&self) -> Option<(u8, u8)> {
        if self.tlv_type != TlvType::Alarm || self.value.len() < 2 {
            return None;
        }
        Some((self.value[0], self.value[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_rejects_bad_lengths() {
        assert_eq!(DeviceMessage::decode(&[0x01]), Err(TlvError::Truncated(1)));
        assert_eq!(
            DeviceMessage::decode(&[0x01, 0x03, 0x00]),
            Err(TlvError::LengthMismatch { declared: 3, actual: 1 })
        );
        assert_eq!(DeviceMessage::decode(&[0x09, 0x00]), Err(TlvError::UnknownType(9)));
    }

    proptest! {
        #[test]
        fn round_trip(t in 1u8..=4, value in proptest::collection::vec(any::<u8>(), 0..=MAX_VALUE_LEN)) {
            let m = DeviceMessage::new(TlvType::try_from(t).unwrap(), value);
            prop_assert_eq!(DeviceMessage::decode(&m.encode().unwrap()).unwrap(), m);
        }
    }
}

//! Bit-exact RF frame codec.
//!
//! ```text
//! +------+------+------+--------+-----+-----+-----+-----+---------+-------+
//! | 0xA5 | 0x5A | type | net_id | src | dst | seq | len | payload | crc16 |
//! +------+------+------+--------+-----+-----+-----+-----+---------+-------+
//!    1      1      1       2       1     1     1     1     0..=64     2
//! ```
//!
//! Multi-byte fields are big-endian. The checksum is CRC-16/CCITT-FALSE
//! (poly 0x1021, init 0xFFFF, no reflection) over every byte after the sync
//! word up to the end of the payload.

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYNC: [u8; 2] = [0xA5, 0x5A];
pub const HEADER_LEN: usize = 9;
pub const CRC_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = 64;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + MAX_PAYLOAD + CRC_LEN;

pub const COORDINATOR_ADDR: u8 = 0x00;
pub const BROADCAST_ADDR: u8 = 0xFF;
pub const FIRST_SLAVE_ADDR: u8 = 0x01;
pub const LAST_SLAVE_ADDR: u8 = 0xFE;

const CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CCITT_FALSE.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum FrameType {
    Data = 0x01,
    Ack = 0x02,
    Beacon = 0x03,
    JoinReq = 0x05,
    JoinAck = 0x06,
    Discovery = 0x07,
}

impl FrameType {
    pub fn name(self) -> &'static str {
        match self {
            FrameType::Data => "DATA",
            FrameType::Ack => "ACK",
            FrameType::Beacon => "BEACON",
            FrameType::JoinReq => "JOIN_REQ",
            FrameType::JoinAck => "JOIN_ACK",
            FrameType::Discovery => "DISCOVERY",
        }
    }
}

impl TryFrom<u8> for FrameType {
    type Error = FrameError;

    fn try_from(v: u8) -> Result<Self, FrameError> {
        Ok(match v {
            0x01 => FrameType::Data,
            0x02 => FrameType::Ack,
            0x03 => FrameType::Beacon,
            0x05 => FrameType::JoinReq,
            0x06 => FrameType::JoinAck,
            0x07 => FrameType::Discovery,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame too short ({0} bytes)")]
    TooShort(usize),
    #[error("bad sync word {0:#04x} {1:#04x}")]
    BadSync(u8, u8),
    #[error("payload length field {declared} does not match {actual} payload bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes exceeds the 64 byte limit")]
    PayloadTooLong(usize),
    #[error("crc mismatch: computed {computed:#06x}, frame carries {carried:#06x}")]
    BadCrc { computed: u16, carried: u16 },
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub frame_type: FrameType,
    pub net_id: u16,
    pub src: u8,
    pub dst: u8,
    pub seq: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(frame_type: FrameType, net_id: u16, src: u8, dst: u8, seq: u8, payload: Vec<u8>) -> Self {
        Frame {
            frame_type,
            net_id,
            src,
            dst,
            seq,
            payload,
        }
    }

    pub fn data(net_id: u16, src: u8, dst: u8, seq: u8, payload: Vec<u8>) -> Self {
        Self::new(FrameType::Data, net_id, src, dst, seq, payload)
    }

    /// Acknowledgment for `frame`, sent by its addressee.
    pub fn ack_for(frame: &Frame, payload: Vec<u8>) -> Self {
        Self::new(FrameType::Ack, frame.net_id, frame.dst, frame.src, frame.seq, payload)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + CRC_LEN
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST_ADDR
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&SYNC);
        out.push(self.frame_type as u8);
        out.extend_from_slice(&self.net_id.to_be_bytes());
        out.push(self.src);
        out.push(self.dst);
        out.push(self.seq);
        out.push(self.payload.len() as u8);
        out.extend_from_slice(&self.payload);
        let crc = crc16(&out[SYNC.len()..]);
        out.extend_from_slice(&crc.to_be_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() < HEADER_LEN + CRC_LEN {
            return Err(FrameError::TooShort(bytes.len()));
        }
        if bytes[..2] != SYNC {
            return Err(FrameError::BadSync(bytes[0], bytes[1]));
        }
        let declared = bytes[8] as usize;
        let actual = bytes.len() - HEADER_LEN - CRC_LEN;
        if declared != actual {
            return Err(FrameError::LengthMismatch { declared, actual });
        }
        if declared > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(declared));
        }
        let body_end = HEADER_LEN + declared;
        let computed = crc16(&bytes[SYNC.len()..body_end]);
        let carried = u16::from_be_bytes([bytes[body_end], bytes[body_end + 1]]);
        if computed != carried {
            return Err(FrameError::BadCrc { computed, carried });
        }
        Ok(Frame {
            frame_type: FrameType::try_from(bytes[2])?,
            net_id: u16::from_be_bytes([bytes[3], bytes[4]]),
            src: bytes[5],
            dst: bytes[6],
            seq: bytes[7],
            payload: bytes[HEADER_LEN..body_end].to_vec(),
        })
    }
}

pub fn encode_frame(f: &Frame) -> Result<Vec<u8>, FrameError> {
    f.encode()
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    Frame::decode(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bitwise CRC-16/CCITT-FALSE, independent of the table-driven crate.
    fn crc_oracle(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &b in data {
            crc ^= (b as u16) << 8;
            for _ in 0..8 {
                crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            }
        }
        crc
    }

    fn sample() -> Frame {
        Frame::data(0x0001, 0x00, 0x07, 0x2A, vec![0x01, 0x01, 0x01])
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc_oracle(b"123456789"), 0x29B1);
        assert_eq!(crc16(b"123456789"), 0x29B1);
    }

    #[test]
    fn reference_frame_layout() {
        let bytes = sample().encode().unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(&bytes[..12], &[0xA5, 0x5A, 0x01, 0x00, 0x01, 0x00, 0x07, 0x2A, 0x03, 0x01, 0x01, 0x01]);
        let expected = crc_oracle(&bytes[2..12]);
        assert_eq!(u16::from_be_bytes([bytes[12], bytes[13]]), expected);
        assert_eq!(expected, 0xC008);
    }

    #[test]
    fn flipped_payload_bit_fails_crc() {
        let mut bytes = sample().encode().unwrap();
        bytes[10] ^= 0x04;
        assert!(matches!(Frame::decode(&bytes), Err(FrameError::BadCrc { .. })));
    }

    #[test]
    fn distinct_decode_errors() {
        let good = sample().encode().unwrap();
        let mut bad_sync = good.clone();
        bad_sync[0] = 0xA4;
        assert!(matches!(Frame::decode(&bad_sync), Err(FrameError::BadSync(0xA4, 0x5A))));
        let mut bad_len = good.clone();
        bad_len[8] = 5;
        assert!(matches!(Frame::decode(&bad_len), Err(FrameError::LengthMismatch { declared: 5, actual: 3 })));
        assert!(matches!(Frame::decode(&good[..5]), Err(FrameError::TooShort(5))));
    }

    #[test]
    fn oversized_payload_is_rejected() {
        let f = Frame::data(1, 0, 1, 0, vec![0; 65]);
        assert_eq!(f.encode(), Err(FrameError::PayloadTooLong(65)));
    }

    fn frame_type() -> impl Strategy<Value = FrameType> {
        prop_oneof![
            Just(FrameType::Data),
            Just(FrameType::Ack),
            Just(FrameType::Beacon),
            Just(FrameType::JoinReq),
            Just(FrameType::JoinAck),
            Just(FrameType::Discovery),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(ft in frame_type(), net in any::<u16>(), src in any::<u8>(), dst in any::<u8>(), seq in any::<u8>(),
                      payload in proptest::collection::vec(any::<u8>(), 0..=64)) {
            let f = Frame::new(ft, net, src, dst, seq, payload);
            let bytes = f.encode().unwrap();
            prop_assert_eq!(bytes.len(), 9 + f.payload.len() + 2);
            prop_assert_eq!(crc_oracle(&bytes[2..bytes.len() - 2]).to_be_bytes(), [bytes[bytes.len() - 2], bytes[bytes.len() - 1]]);
            prop_assert_eq!(Frame::decode(&bytes).unwrap(), f);
        }
    }
}

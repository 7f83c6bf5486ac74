//! Framed messages exchanged between stages.
//!
//! `length u32 (big-endian, payload bytes) | type u8 | payload`

use alloc::vec::Vec;

pub const MAX_PAYLOAD: usize = 64 << 20;
pub const HEADER_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Segment = 0x01,
    Frame = 0x02,
    Sidecar = 0x03,
    Bundle = 0x04,
    CertExchange = 0x05,
    Error = 0x06,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => MsgType::Segment,
            0x02 => MsgType::Frame,
            0x03 => MsgType::Sidecar,
            0x04 => MsgType::Bundle,
            0x05 => MsgType::CertExchange,
            0x06 => MsgType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the 64 MiB limit")]
    FrameTooLarge(usize),
    #[error("stream truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
}

pub fn wire_encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let n = msg.payload.len();
    if n > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(n));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n);
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// An encoded segment as one or more Segment messages, each within the
/// payload limit. The receiver concatenates them in arrival order.
pub fn segment_messages(bytes: &[u8]) -> Vec<WireMessage> {
    if bytes.is_empty() {
        return alloc::vec![WireMessage::new(MsgType::Segment, Vec::new())];
    }
    bytes
        .chunks(MAX_PAYLOAD)
        .map(|c| WireMessage::new(MsgType::Segment, c.to_vec()))
        .collect()
}

/// Parses a header, returning the message type and payload length.
pub fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MsgType, usize), WireError> {
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(len));
    }
    let t = MsgType::from_u8(header[4]).ok_or(WireError::UnknownType(header[4]))?;
    Ok((t, len))
}

/// Decodes the first message of `stream`, returning it and the number of
/// bytes consumed.
pub fn wire_decode(stream: &[u8]) -> Result<(WireMessage, usize), WireError> {
    let header: &[u8; HEADER_LEN] = stream
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(WireError::Truncated {
            needed: HEADER_LEN,
            available: stream.len(),
        })?;
    let (msg_type, len) = parse_header(header)?;
    let end = HEADER_LEN + len;
    let payload = stream.get(HEADER_LEN..end).ok_or(WireError::Truncated {
        needed: end,
        available: stream.len(),
    })?;
    Ok((WireMessage::new(msg_type, payload.to_vec()), end))
}

//! Federation wire messages.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! u32 total frame length (including these 4 bytes)
//! u8  message type
//! u32 round
//! u16 client-id length, then UTF-8 client id
//! body (GLOBAL_WEIGHTS and LOCAL_UPDATE only)
//! ```
//!
//! A GLOBAL_WEIGHTS body is a weight file. A LOCAL_UPDATE body is
//! `u64 n_k, f64 loss` (little-endian) followed by a weight file.

use alloc::string::String;
use alloc::vec::Vec;

use crate::codec::Reader;
use crate::error::{DecodeError, Error, Result};
use crate::fed::{decode_weights_unchecked, serialize_weights, ClientUpdate};
use crate::numerics::{LayoutId, ModelWeights};

pub const FRAME_HEADER_LEN: usize = 4 + 1 + 4 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Join = 1,
    GlobalWeights = 2,
    LocalUpdate = 3,
    RoundDone = 4,
    Abort = 5,
}

impl MessageType {
    pub fn carries_body(self) -> bool {
        matches!(self, MessageType::GlobalWeights | MessageType::LocalUpdate)
    }

    fn from_u8(b: u8) -> Result<Self, DecodeError> {
        Ok(match b {
            1 => MessageType::Join,
            2 => MessageType::GlobalWeights,
            3 => MessageType::LocalUpdate,
            4 => MessageType::RoundDone,
            5 => MessageType::Abort,
            other => return Err(DecodeError::UnknownMessageType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageType,
    pub round: u32,
    pub client_id: String,
    pub body: Vec<u8>,
}

impl Message {
    pub fn new(kind: MessageType, round: u32, client_id: impl Into<String>, body: Vec<u8>) -> Self {
        Message {
            kind,
            round,
            client_id: client_id.into(),
            body,
        }
    }

    pub fn join(client_id: &str) -> Self {
        Message::new(MessageType::Join, 0, client_id, Vec::new())
    }

    pub fn global_weights(round: u32, client_id: &str, w: &ModelWeights<f32>) -> Self {
        Message::new(MessageType::GlobalWeights, round, client_id, serialize_weights(w))
    }

    pub fn local_update(u: &ClientUpdate<f32>) -> Self {
        let mut body = Vec::with_capacity(16 + crate::fed::WEIGHTS_HEADER_LEN + 4 * u.weights.len());
        body.extend_from_slice(&u.n_k.to_le_bytes());
        body.extend_from_slice(&u.loss.to_le_bytes());
        body.extend_from_slice(&serialize_weights(&u.weights));
        Message::new(MessageType::LocalUpdate, u.round, u.client_id.as_str(), body)
    }

    pub fn round_done(round: u32, client_id: &str) -> Self {
        Message::new(MessageType::RoundDone, round, client_id, Vec::new())
    }

    pub fn abort(round: u32, client_id: &str) -> Self {
        Message::new(MessageType::Abort, round, client_id, Vec::new())
    }

    /// Weights carried by a GLOBAL_WEIGHTS message.
    pub fn weights(&self, expected: LayoutId) -> Result<ModelWeights<f32>> {
        if self.kind != MessageType::GlobalWeights {
            return Err(Error::Protocol(alloc::format!("expected GLOBAL_WEIGHTS, got {:?}", self.kind)));
        }
        Ok(crate::fed::deserialize_weights(&self.body, expected)?)
    }

    /// Client update carried by a LOCAL_UPDATE message.
    pub fn update(&self) -> Result<ClientUpdate<f32>> {
        if self.kind != MessageType::LocalUpdate {
            return Err(Error::Protocol(alloc::format!("expected LOCAL_UPDATE, got {:?}", self.kind)));
        }
        let mut r = Reader::new(&self.body);
        let n_k = r.u64_le()?;
        let loss = f64::from_le_bytes(r.array()?);
        let weights = decode_weights_unchecked(r.rest())?;
        Ok(ClientUpdate {
            client_id: self.client_id.clone(),
            round: self.round,
            n_k,
            weights,
            loss,
        })
    }
}

pub fn encode_message(m: &Message) -> Result<Vec<u8>> {
    if m.kind.carries_body() && m.body.is_empty() {
        return Err(Error::Contract(alloc::format!("{:?} requires a body", m.kind)));
    }
    if !m.kind.carries_body() && !m.body.is_empty() {
        return Err(Error::Contract(alloc::format!("{:?} must not carry a body", m.kind)));
    }
    let id_len = u16::try_from(m.client_id.len())
        .map_err(|_| Error::Contract("client id longer than 65535 bytes".into()))?;
    let total = FRAME_HEADER_LEN + m.client_id.len() + m.body.len();
    let total_u32 = u32::try_from(total).map_err(|_| Error::Contract("frame exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&total_u32.to_be_bytes());
    out.push(m.kind as u8);
    out.extend_from_slice(&m.round.to_be_bytes());
    out.extend_from_slice(&id_len.to_be_bytes());
    out.extend_from_slice(m.client_id.as_bytes());
    out.extend_from_slice(&m.body);
    Ok(out)
}

/// Total length declared by the frame starting at `buf`, once its prefix is available.
pub fn frame_len(buf: &[u8]) -> Option<usize> {
    buf.get(..4)
        .map(|p| u32::from_be_bytes([p[0], p[1], p[2], p[3]]) as usize)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    let declared = frame_len(bytes).ok_or(DecodeError::Truncated {
        needed: 4,
        available: bytes.len(),
    })?;
    if declared > bytes.len() {
        return Err(DecodeError::Truncated {
            needed: declared,
            available: bytes.len(),
        });
    }
    if declared != bytes.len() || declared < FRAME_HEADER_LEN {
        return Err(DecodeError::LengthMismatch {
            declared,
            actual: bytes.len(),
        });
    }
    let mut r = Reader::new(&bytes[4..]);
    let kind = MessageType::from_u8(r.u8()?)?;
    let round = r.u32_be()?;
    let id_len = r.u16_be()? as usize;
    if FRAME_HEADER_LEN + id_len > declared {
        return Err(DecodeError::LengthMismatch {
            declared,
            actual: FRAME_HEADER_LEN + id_len,
        });
    }
    let client_id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|e| DecodeError::InvalidField {
        field: "client_id",
        reason: alloc::format!("{e}"),
    })?;
    let body = r.rest().to_vec();
    if kind.carries_body() == body.is_empty() {
        return Err(DecodeError::InvalidField {
            field: "body",
            reason: alloc::format!("{kind:?} with {} body bytes", body.len()),
        });
    }
    Ok(Message {
        kind,
        round,
        client_id,
        body,
    })
}

/// Splits a concatenation of frames back into messages.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<Message>, DecodeError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let len = frame_len(bytes).ok_or(DecodeError::Truncated {
            needed: 4,
            available: bytes.len(),
        })?;
        if len < FRAME_HEADER_LEN {
            return Err(DecodeError::LengthMismatch {
                declared: len,
                actual: FRAME_HEADER_LEN,
            });
        }
        if len > bytes.len() {
            return Err(DecodeError::Truncated {
                needed: len,
                available: bytes.len(),
            });
        }
        out.push(decode_message(&bytes[..len])?);
        bytes = &bytes[len..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn join_frame_is_13_bytes() {
        let bytes = encode_message(&Message::join("c1")).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 4 + 2 + 2);
        assert_eq!(&bytes[..4], &13u32.to_be_bytes());
        assert_eq!(decode_message(&bytes).unwrap(), Message::join("c1"));
    }

    #[test]
    fn declared_length_beyond_input_is_truncation() {
        let mut bytes = encode_message(&Message::join("c1")).unwrap();
        bytes[3] = 40;
        assert!(matches!(decode_message(&bytes), Err(DecodeError::Truncated { needed: 40, .. })));
        let short = encode_message(&Message::join("c1")).unwrap();
        let mut long = short.clone();
        long.push(0);
        assert!(matches!(decode_message(&long), Err(DecodeError::LengthMismatch { .. })));
    }

    #[test]
    fn unknown_type_is_rejected() {
        let mut bytes = encode_message(&Message::join("c1")).unwrap();
        bytes[4] = 9;
        assert_eq!(decode_message(&bytes), Err(DecodeError::UnknownMessageType(9)));
    }

    #[test]
    fn body_presence_enforced() {
        assert!(encode_message(&Message::new(MessageType::Join, 0, "a", vec![1])).is_err());
        assert!(encode_message(&Message::new(MessageType::GlobalWeights, 0, "a", vec![])).is_err());
    }

    #[test]
    fn update_payload_round_trip() {
        let u = ClientUpdate {
            client_id: "site-2".into(),
            round: 7,
            n_k: 80,
            weights: ModelWeights::new(LayoutId(11), vec![0.5f32, -1.25]),
            loss: 0.0375,
        };
        let m = decode_message(&encode_message(&Message::local_update(&u)).unwrap()).unwrap();
        assert_eq!(m.update().unwrap(), u);
        assert!(m.weights(LayoutId(11)).is_err());
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        (1u8..=5, any::<u32>(), "[a-z0-9-]{0,12}", proptest::collection::vec(any::<u8>(), 1..64)).prop_map(
            |(k, round, id, body)| {
                let kind = MessageType::from_u8(k).unwrap();
                let body = if kind.carries_body() { body } else { Vec::new() };
                Message::new(kind, round, id, body)
            },
        )
    }

    proptest! {
        #[test]
        fn frames_round_trip(m in arb_message()) {
            prop_assert_eq!(decode_message(&encode_message(&m).unwrap()).unwrap(), m);
        }

        #[test]
        fn concatenated_frames_self_delimit(ms in proptest::collection::vec(arb_message(), 0..8)) {
            let mut buf = Vec::new();
            for m in &ms {
                buf.extend(encode_message(m).unwrap());
            }
            prop_assert_eq!(decode_stream(&buf).unwrap(), ms);
        }
    }
}

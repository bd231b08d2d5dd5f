//! Weight file: `FCWB`, version u16, layout id (8 bytes), count u64, then
//! `count` little-endian f32 values. All header integers are little-endian.

use alloc::vec::Vec;

use crate::codec::Reader;
use crate::error::DecodeError;
use crate::numerics::{LayoutId, ModelWeights};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"FCWB";
pub const WEIGHTS_VERSION: u16 = 1;
pub const WEIGHTS_HEADER_LEN: usize = 4 + 2 + 8 + 8;

pub fn serialize_weights(w: &ModelWeights<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(WEIGHTS_HEADER_LEN + 4 * w.len());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&w.layout_id.0.to_le_bytes());
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for v in &w.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes without checking the layout id against a model.
pub fn decode_weights_unchecked(bytes: &[u8]) -> Result<ModelWeights<f32>, DecodeError> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.array()?;
    if magic != WEIGHTS_MAGIC {
        return Err(DecodeError::BadMagic {
            expected: WEIGHTS_MAGIC,
            found: magic,
        });
    }
    let version = r.u16_le()?;
    if version != WEIGHTS_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let layout_id = LayoutId(r.u64_le()?);
    let count = r.u64_le()?;
    let payload = count
        .checked_mul(4)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(DecodeError::Truncated {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    if r.remaining() < payload {
        return Err(DecodeError::Truncated {
            needed: WEIGHTS_HEADER_LEN + payload,
            available: bytes.len(),
        });
    }
    let mut values = Vec::with_capacity(count as usize);
    for _ in 0..count {
        values.push(r.f32_le()?);
    }
    if r.remaining() != 0 {
        return Err(DecodeError::TrailingBytes(r.remaining()));
    }
    Ok(ModelWeights::new(layout_id, values))
}

/// Decodes and verifies the layout id.
pub fn deserialize_weights(bytes: &[u8], expected: LayoutId) -> Result<ModelWeights<f32>, DecodeError> {
    let w = decode_weights_unchecked(bytes)?;
    if w.layout_id != expected {
        return Err(DecodeError::LayoutMismatch {
            expected: expected.0,
            found: w.layout_id.0,
        });
    }
    Ok(w)
}

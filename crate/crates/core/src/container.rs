//! Little-endian binary container shared by embedding datasets, class weights
//! and adapter checkpoints.
//!
//! ```text
//! magic      4 bytes
//! header     3 × u32
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON
//! payload    packed little-endian floats
//! ```

use crate::error::{Error, Result};

pub(crate) const HEADER_LEN: usize = 4 + 3 * 4 + 4;

#[derive(Debug)]
pub(crate) struct Container<'a> {
    pub header: [u32; 3],
    pub meta: &'a [u8],
    pub payload: &'a [u8],
}

pub(crate) fn encode(magic: &[u8; 4], header: [u32; 3], meta: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + meta.len() + payload.len());
    buf.extend_from_slice(magic);
    for h in header {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta);
    buf.extend_from_slice(payload);
    buf
}

pub(crate) fn decode<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<Container<'a>> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: *magic,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile { context: "header" });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let header = [word(0), word(1), word(2)];
    let meta_len = word(3) as usize;
    let rest = &bytes[HEADER_LEN..];
    if rest.len() < meta_len {
        return Err(Error::TruncatedFile {
            context: "metadata block",
        });
    }
    let (meta, payload) = rest.split_at(meta_len);
    Ok(Container {
        header,
        meta,
        payload,
    })
}

pub(crate) fn f32_bytes<'a>(values: impl IntoIterator<Item = &'a f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn f64_bytes<'a>(values: impl IntoIterator<Item = &'a f64>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Checks that `payload` holds exactly `count` values of `width` bytes.
pub(crate) fn check_payload(payload: &[u8], count: usize, width: usize) -> Result<()> {
    let expected = count * width;
    if payload.len() < expected {
        return Err(Error::TruncatedFile {
            context: "vector block",
        });
    }
    if payload.len() > expected {
        return Err(Error::DimMismatch {
            context: "vector block length (bytes)",
            expected,
            found: payload.len(),
        });
    }
    Ok(())
}

pub(crate) fn read_f32s(payload: &[u8]) -> impl Iterator<Item = f32> + '_ {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
}

pub(crate) fn read_f64s(payload: &[u8]) -> impl Iterator<Item = f64> + '_ {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
}

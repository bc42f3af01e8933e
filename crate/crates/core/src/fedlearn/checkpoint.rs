//! Binary checkpoints: `DMCK`, u32 version, u64 length, then little-endian f64s.

use std::io::{Read, Write};

use super::model::ModelParams;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DMCK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_error(offset: usize, reason: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN {
        return Err(decode_error(bytes.len(), "truncated checkpoint header"));
    }
    if bytes[..4] != MAGIC {
        return Err(decode_error(0, "bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(decode_error(4, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len.saturating_mul(8) {
        return Err(decode_error(
            HEADER_LEN + body.len().min(len.saturating_mul(8)),
            format!("expected {len} values, found {} bytes", body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ModelParams { values })
}

pub fn write<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    w.write_all(&encode(params))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

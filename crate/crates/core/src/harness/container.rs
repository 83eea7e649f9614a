//! `BHSI` raster container: a 24-byte little-endian header (magic, version,
//! height, width, bands, dtype) followed by f32 samples in H, W, B order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const MAGIC: &[u8; 4] = b"BHSI";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: usize = 24;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

pub fn encode(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + r.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, r.height() as u32, r.width() as u32, r.channels() as u32, DTYPE_F32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in r.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"BHSI\"", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let (h, w, b) = (word(1) as usize, word(2) as usize, word(3) as usize);
    for (i, (name, v)) in [("height", h), ("width", w), ("bands", b)].into_iter().enumerate() {
        if v == 0 {
            return Err(format_err(8 + 4 * i, format!("{name} must be positive")));
        }
    }
    let dtype = word(4);
    if dtype != DTYPE_F32 {
        return Err(format_err(20, format!("unsupported dtype code {dtype}, expected {DTYPE_F32}")));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(b))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| format_err(8, "dimensions overflow"))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(format_err(
            HEADER_LEN + actual.min(expected),
            format!("payload expected {expected} bytes, found {actual}"),
        ));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(format_err(HEADER_LEN + 4 * i, "non-finite sample"));
    }
    Raster::new(h, w, b, data)
}

pub fn write(path: &Path, r: &Raster) -> Result<()> {
    std::fs::write(path, encode(r))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Raster> {
    decode(&std::fs::read(path)?)
}

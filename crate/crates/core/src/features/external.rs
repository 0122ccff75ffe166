//! Externally computed feature tensors on disk: magic "CSOT", version u16,
//! then H, W, D as u32 and H·W·D little-endian 32-bit floats in channel-plane
//! row-major order. Loading is bit-exact with respect to storing.

use std::path::Path;

use crate::spectral::SpatialMap;
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"CSOT";
const VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 3 * 4;
/// Upper bound on element count, rejecting absurd headers before allocation.
const MAX_ELEMENTS: u64 = 1 << 30;

/// Reads a tensor file into a spatial map, dimensions taken from the header.
pub fn load_external(path: impl AsRef<Path>) -> Result<SpatialMap> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Truncated { expected: HEADER_BYTES, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { found });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as u64;
    let (h, w, d) = (dim(0), dim(1), dim(2));
    let elements = h.checked_mul(w).and_then(|p| p.checked_mul(d));
    match elements {
        Some(n) if n > 0 && n <= MAX_ELEMENTS => {}
        _ => return Err(Error::DimensionOverflow { height: h, width: w, channels: d }),
    }
    let count = elements.unwrap() as usize;
    let expected = count * 4;
    let payload = &bytes[HEADER_BYTES..];
    if payload.len() < expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::InvalidInput(format!(
            "tensor file has {} trailing bytes",
            payload.len() - expected
        )));
    }
    let mut values = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite("external tensor"));
        }
        values.push(v as f64);
    }
    SpatialMap::new(h as usize, w as usize, d as usize, values)
}

/// Writes a spatial map in the format read by `load_external`. Values are
/// stored as 32-bit floats; maps whose values are exactly representable in
/// 32 bits round-trip bit-exactly.
pub fn store_external(path: impl AsRef<Path>, map: &SpatialMap) -> Result<()> {
    if map.height as u64 > u32::MAX as u64
        || map.width as u64 > u32::MAX as u64
        || map.channels as u64 > u32::MAX as u64
    {
        return Err(Error::DimensionOverflow {
            height: map.height as u64,
            width: map.width as u64,
            channels: map.channels as u64,
        });
    }
    let mut bytes = Vec::with_capacity(HEADER_BYTES + map.values.len() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(map.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.channels as u32).to_le_bytes());
    for v in &map.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

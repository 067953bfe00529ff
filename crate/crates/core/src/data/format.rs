//! `HSIC` cube and `HSIL` label files.
//!
//! Both start with a 4-byte magic and four little-endian `u32`s:
//! version (1), H, W and B (cubes) or C (labels). The payload follows
//! directly: `H·W·B` little-endian `f32` in band-interleaved-by-pixel,
//! row-major order, or `H·W` little-endian `u16` labels.

use std::fs;
use std::path::Path;

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

/// Bytes before the payload of either format.
pub const HEADER_BYTES: usize = 20;

fn header(magic: &[u8; 4], dims: [usize; 3]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(HEADER_BYTES);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("extent {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    Ok(buf)
}

fn parse_header(bytes: &[u8], magic: &[u8; 4], what: &'static str) -> Result<[usize; 3]> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::format(what, bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            what,
            0,
            format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(Error::format(what, 4, format!("unsupported version {}", word(0))));
    }
    Ok([word(1) as usize, word(2) as usize, word(3) as usize])
}

fn payload<'a>(bytes: &'a [u8], count: Option<usize>, size: usize, what: &'static str) -> Result<&'a [u8]> {
    let need = count
        .and_then(|n| n.checked_mul(size))
        .ok_or_else(|| Error::format(what, 8, "extent overflow"))?;
    let body = &bytes[HEADER_BYTES..];
    if body.len() != need {
        return Err(Error::format(
            what,
            (HEADER_BYTES + body.len().min(need)) as u64,
            format!("payload is {} bytes, extents need {need}", body.len()),
        ));
    }
    Ok(body)
}

pub fn encode_hsic(cube: &HsiCube) -> Result<Vec<u8>> {
    let mut buf = header(b"HSIC", [cube.height(), cube.width(), cube.bands()])?;
    buf.reserve(4 * cube.tensor().len());
    for v in cube.tensor().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_hsic(bytes: &[u8]) -> Result<HsiCube> {
    const WHAT: &str = "HSIC file";
    let [h, w, b] = parse_header(bytes, b"HSIC", WHAT)?;
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::format(WHAT, 8, "zero extent"));
    }
    let count = h.checked_mul(w).and_then(|n| n.checked_mul(b));
    let body = payload(bytes, count, 4, WHAT)?;
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HsiCube::new(h, w, b, values)
}

pub fn encode_hsil(labels: &LabelMap) -> Result<Vec<u8>> {
    let mut buf = header(b"HSIL", [labels.height, labels.width, labels.classes])?;
    buf.reserve(2 * labels.len());
    for l in &labels.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_hsil(bytes: &[u8]) -> Result<LabelMap> {
    const WHAT: &str = "HSIL file";
    let [h, w, c] = parse_header(bytes, b"HSIL", WHAT)?;
    if h == 0 || w == 0 {
        return Err(Error::format(WHAT, 8, "zero extent"));
    }
    let body = payload(bytes, h.checked_mul(w), 2, WHAT)?;
    let labels = body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelMap::new(h, w, c, labels)
}

pub fn write_hsic(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_hsic(cube)?).map_err(|e| Error::file(path, e))
}

pub fn read_hsic(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    decode_hsic(&fs::read(path).map_err(|e| Error::file(path, e))?)
}

pub fn write_hsil(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_hsil(labels)?).map_err(|e| Error::file(path, e))
}

pub fn read_hsil(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    decode_hsil(&fs::read(path).map_err(|e| Error::file(path, e))?)
}

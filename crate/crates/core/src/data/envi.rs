//! Minimal ENVI reader: a `key = value` text header plus a raw binary
//! companion in BSQ, BIL or BIP order, 32-bit float or unsigned 16-bit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

const WHAT: &str = "ENVI header";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataType {
    F32,
    U16,
}

impl DataType {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            4 => Some(DataType::F32),
            12 => Some(DataType::U16),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::F32 => 4,
            DataType::U16 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnviHeader {
    /// Columns.
    pub samples: usize,
    /// Rows.
    pub lines: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub big_endian: bool,
    pub header_offset: usize,
    pub wavelengths: Option<Vec<f64>>,
}

fn parse_usize(fields: &HashMap<String, (usize, String)>, key: &str) -> Result<Option<usize>> {
    match fields.get(key) {
        None => Ok(None),
        Some((line, v)) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::format(WHAT, *line as u64, format!("bad {key} value {v:?}"))),
    }
}

impl EnviHeader {
    /// Parses header text. Offsets in errors are 1-based line numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == "ENVI" => {}
            _ => return Err(Error::format(WHAT, 1, "first line must be ENVI")),
        }
        let mut fields: HashMap<String, (usize, String)> = HashMap::new();
        while let Some((i, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(WHAT, i as u64 + 1, format!("expected key = value, got {line:?}")));
            };
            let key = key.trim().to_ascii_lowercase();
            let mut value = value.trim().to_string();
            if value.starts_with('{') {
                while !value.contains('}') {
                    let Some((_, more)) = lines.next() else {
                        return Err(Error::format(WHAT, i as u64 + 1, format!("unterminated {{ in {key}")));
                    };
                    value.push(' ');
                    value.push_str(more.trim());
                }
                let inner = &value[1..value.find('}').expect("checked")];
                value = inner.trim().to_string();
            }
            fields.insert(key, (i + 1, value));
        }
        let required = |key: &str| -> Result<usize> {
            parse_usize(&fields, key)?
                .ok_or_else(|| Error::format(WHAT, 0, format!("missing {key}")))
        };
        let samples = required("samples")?;
        let lines_n = required("lines")?;
        let bands = required("bands")?;
        if samples == 0 || lines_n == 0 || bands == 0 {
            return Err(Error::format(WHAT, 0, "zero extent"));
        }
        let code = required("data type")?;
        let data_type = DataType::from_code(code as u32).ok_or_else(|| {
            let line = fields.get("data type").map_or(0, |f| f.0);
            Error::format(WHAT, line as u64, format!("unsupported data type {code} (need 4 or 12)"))
        })?;
        let interleave = match fields.get("interleave") {
            None => return Err(Error::format(WHAT, 0, "missing interleave")),
            Some((line, v)) => match v.trim().to_ascii_lowercase().as_str() {
                "bsq" => Interleave::Bsq,
                "bil" => Interleave::Bil,
                "bip" => Interleave::Bip,
                other => {
                    return Err(Error::format(WHAT, *line as u64, format!("unknown interleave {other:?}")))
                }
            },
        };
        let big_endian = match parse_usize(&fields, "byte order")? {
            None | Some(0) => false,
            Some(1) => true,
            Some(other) => {
                let line = fields["byte order"].0;
                return Err(Error::format(WHAT, line as u64, format!("byte order {other}")));
            }
        };
        let header_offset = parse_usize(&fields, "header offset")?.unwrap_or(0);
        let wavelengths = match fields.get("wavelength") {
            None => None,
            Some((line, v)) => Some(
                v.split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::format(WHAT, *line as u64, "bad wavelength list"))?,
            ),
        };
        Ok(EnviHeader {
            samples,
            lines: lines_n,
            bands,
            interleave,
            data_type,
            big_endian,
            header_offset,
            wavelengths,
        })
    }

    pub fn payload_bytes(&self) -> Option<usize> {
        self.samples
            .checked_mul(self.lines)?
            .checked_mul(self.bands)?
            .checked_mul(self.data_type.size())
    }

    /// Decodes `raw` into `lines × samples × bands` row-major (BIP) order.
    pub fn decode(&self, raw: &[u8]) -> Result<Vec<f32>> {
        let payload = self
            .payload_bytes()
            .ok_or_else(|| Error::format("ENVI raw", 0, "extent overflow"))?;
        let expected = payload + self.header_offset;
        if raw.len() != expected {
            return Err(Error::format(
                "ENVI raw",
                raw.len().min(expected) as u64,
                format!("header promises {expected} bytes, file has {}", raw.len()),
            ));
        }
        let body = &raw[self.header_offset..];
        let size = self.data_type.size();
        let value = |i: usize| -> f32 {
            let b = &body[i * size..(i + 1) * size];
            match (self.data_type, self.big_endian) {
                (DataType::F32, false) => f32::from_le_bytes(b.try_into().unwrap()),
                (DataType::F32, true) => f32::from_be_bytes(b.try_into().unwrap()),
                (DataType::U16, false) => u16::from_le_bytes(b.try_into().unwrap()) as f32,
                (DataType::U16, true) => u16::from_be_bytes(b.try_into().unwrap()) as f32,
            }
        };
        let (h, w, nb) = (self.lines, self.samples, self.bands);
        let mut out = vec![0f32; h * w * nb];
        for y in 0..h {
            for x in 0..w {
                for b in 0..nb {
                    let src = match self.interleave {
                        Interleave::Bsq => (b * h + y) * w + x,
                        Interleave::Bil => (y * nb + b) * w + x,
                        Interleave::Bip => (y * w + x) * nb + b,
                    };
                    out[(y * w + x) * nb + b] = value(src);
                }
            }
        }
        Ok(out)
    }
}

fn read_pair(header_path: &Path, raw_path: &Path) -> Result<(EnviHeader, Vec<f32>)> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::file(header_path, e))?;
    let header = EnviHeader::parse(&text)?;
    let raw = fs::read(raw_path).map_err(|e| Error::file(raw_path, e))?;
    let values = header.decode(&raw)?;
    Ok((header, values))
}

pub fn read_envi_cube(header_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<HsiCube> {
    let (header, values) = read_pair(header_path.as_ref(), raw_path.as_ref())?;
    let mut cube = HsiCube::new(header.lines, header.samples, header.bands, values)?;
    cube.wavelengths = header.wavelengths;
    Ok(cube)
}

/// Reads a single-band unsigned 16-bit class raster. The class count is the
/// largest label present.
pub fn read_envi_labels(header_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<LabelMap> {
    let (header, values) = read_pair(header_path.as_ref(), raw_path.as_ref())?;
    if header.bands != 1 || header.data_type != DataType::U16 {
        return Err(Error::format(
            WHAT,
            0,
            "label rasters must be single-band unsigned 16-bit",
        ));
    }
    let labels: Vec<u16> = values.into_iter().map(|v| v as u16).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) as usize;
    LabelMap::new(header.lines, header.samples, classes, labels)
}

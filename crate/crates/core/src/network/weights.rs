//! `HSIW` weight files.
//!
//! Layout (all integers little-endian `u32`, floats little-endian):
//!
//! ```text
//! "HSIW" | version=1 | bands | classes | width | residual_modules
//!        | n_scales | scale[n_scales]
//!        | f64 lrn.n | f64 lrn.k | f64 lrn.alpha | f64 lrn.beta | f64 dropout_rate
//!        | per tensor: rank | extent[rank] | f32 values
//! ```
//!
//! Tensors follow the network's fixed parameter order: each bank branch,
//! fusion, each residual module's two convolutions, the two hidden
//! classifier layers, the output layer; weight before bias.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ContextualNet, NetworkConfig};
use crate::error::{Error, Result};
use crate::layers::LrnParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HSIW";
const VERSION: u32 = 1;
const WHAT: &str = "weight file";

pub fn write_weights(net: &ContextualNet<f32>, out: &mut impl Write) -> Result<()> {
    let cfg = net.config();
    if cfg.plain_modules > 0 {
        return Err(Error::config(
            "networks with plain (shortcut-free) modules have no weight-file encoding",
        ));
    }
    let mut buf = Vec::with_capacity(64 + 4 * net.num_parameters());
    buf.extend_from_slice(MAGIC);
    let u32s = [
        VERSION,
        cfg.bands as u32,
        cfg.classes as u32,
        cfg.width as u32,
        cfg.residual_modules as u32,
        cfg.bank_scales.len() as u32,
    ];
    for v in u32s.into_iter().chain(cfg.bank_scales.iter().map(|&s| s as u32)) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [
        cfg.lrn.n as f64,
        cfg.lrn.k,
        cfg.lrn.alpha,
        cfg.lrn.beta,
        cfg.dropout_rate,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for p in net.params() {
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_weights(net: &ContextualNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_weights(net, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                WHAT,
                self.pos as u64,
                format!("truncated while reading {field}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

/// Parses an in-memory weight file. Nothing is returned unless the whole
/// file is consistent with the configuration it declares.
pub fn read_weights(bytes: &[u8]) -> Result<ContextualNet<f32>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(WHAT, 0, "bad magic, expected HSIW"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(WHAT, 4, format!("unsupported version {version}")));
    }
    let bands = cur.u32("bands")? as usize;
    let classes = cur.u32("classes")? as usize;
    let width = cur.u32("width")? as usize;
    let residual_modules = cur.u32("residual module count")? as usize;
    let n_scales = cur.u32("scale count")? as usize;
    if n_scales > 16 {
        return Err(Error::format(WHAT, cur.pos as u64 - 4, format!("{n_scales} bank scales")));
    }
    let bank_scales = (0..n_scales)
        .map(|_| cur.u32("bank scale").map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let n = cur.f64("lrn n")?;
    let lrn = LrnParams {
        n: if n.fract() == 0.0 && (0.0..1e6).contains(&n) { n as usize } else { 0 },
        k: cur.f64("lrn k")?,
        alpha: cur.f64("lrn alpha")?,
        beta: cur.f64("lrn beta")?,
    };
    let dropout_rate = cur.f64("dropout rate")?;
    let config = NetworkConfig {
        bands,
        classes,
        width,
        residual_modules,
        bank_scales,
        lrn,
        dropout_rate,
        plain_modules: 0,
    };
    config.validate()?;

    let expected = config.param_shapes();
    let mut tensors = Vec::with_capacity(expected.len());
    for (i, want) in expected.iter().enumerate() {
        let at = cur.pos as u64;
        let rank = cur.u32("tensor rank")? as usize;
        if rank != want.len() {
            return Err(Error::config(format!(
                "tensor {i} at offset {at} has rank {rank}, config implies {}",
                want.len()
            )));
        }
        let shape = (0..rank)
            .map(|_| cur.u32("tensor extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want {
            return Err(Error::config(format!(
                "tensor {i} at offset {at} has shape {shape:?}, config implies {want:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(4 * len, "tensor values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&shape, data)?;
        if !t.is_finite() {
            return Err(Error::format(WHAT, at, format!("tensor {i} holds non-finite values")));
        }
        tensors.push(t);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            WHAT,
            cur.pos as u64,
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    ContextualNet::from_parts(config, tensors)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ContextualNet<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    read_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ContextualNet<f32> {
        let cfg = NetworkConfig {
            width: 3,
            ..NetworkConfig::new(4, 2)
        };
        ContextualNet::build(&cfg, 17).unwrap()
    }

    fn bytes(net: &ContextualNet<f32>) -> Vec<u8> {
        let mut b = Vec::new();
        write_weights(net, &mut b).unwrap();
        b
    }

    #[test]
    fn save_load_save_identical() {
        let first = bytes(&small());
        let second = bytes(&read_weights(&first).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn truncated_file_names_offset() {
        let b = bytes(&small());
        for cut in [2, 10, b.len() - 1] {
            match read_weights(&b[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = bytes(&small());
        b[0] = b'X';
        assert!(matches!(read_weights(&b), Err(Error::Format { offset: 0, .. })));
        let mut b = bytes(&small());
        b[4] = 2;
        assert!(matches!(read_weights(&b), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn edited_width_is_config_mismatch() {
        let mut b = bytes(&small());
        // width lives at byte 16
        b[16..20].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(read_weights(&b), Err(Error::Config(_))));
    }

    #[test]
    fn plain_modules_not_serializable() {
        let cfg = NetworkConfig {
            width: 3,
            plain_modules: 1,
            ..NetworkConfig::new(4, 2)
        };
        let net = ContextualNet::build(&cfg, 0).unwrap();
        assert!(write_weights(&net, &mut Vec::new()).is_err());
    }
}

//! Binary checkpoint format.
//!
//! ```text
//! "CDNCKPT1"
//! u32 parameter count
//! per parameter (lexicographic path order):
//!     u32 path length, path bytes (UTF-8)
//!     u32 rank, rank × u32 dims
//!     product(dims) × f32, row-major
//! u32 footer length, footer = model configuration as `key = value` lines
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{CdnError, Result};
use crate::numeric::{ParamStore, Tensor};

use super::config::ModelConfig;
use super::params::check_params;

pub const MAGIC: &[u8; 8] = b"CDNCKPT1";

pub fn to_bytes(cfg: &ModelConfig, params: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * params.num_elements());
    let u32le = |out: &mut Vec<u8>, x: usize| out.extend_from_slice(&(x as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    u32le(&mut out, params.len());
    for (path, t) in params.iter() {
        u32le(&mut out, path.len());
        out.extend_from_slice(path.as_bytes());
        u32le(&mut out, t.rank());
        for &d in t.shape() {
            u32le(&mut out, d);
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let footer = cfg.to_kv_text();
    u32le(&mut out, footer.len());
    out.extend_from_slice(footer.as_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CdnError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CdnError::Format("checkpoint string is not UTF-8".into()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(ModelConfig, ParamStore<f32>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(CdnError::Format("not a checkpoint (bad magic)".into()));
    }
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let path = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CdnError::Format(format!("{path}: shape overflows")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| CdnError::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params
            .insert(path, Tensor::new(shape, data)?)
            .map_err(|e| CdnError::Format(e.to_string()))?;
    }
    let cfg = ModelConfig::from_kv_text(&r.string()?)?;
    if r.pos != buf.len() {
        return Err(CdnError::Format(format!(
            "{} trailing bytes after checkpoint footer",
            buf.len() - r.pos
        )));
    }
    check_params(&cfg, &params)?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, params: &ParamStore<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(cfg, params)).map_err(|e| CdnError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ParamStore<f32>)> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| CdnError::io(path, e))?)
}

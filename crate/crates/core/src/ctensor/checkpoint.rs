//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "DCCRNCKP"
//! version    u32      CHECKPOINT_VERSION
//! meta_len   u32      length of the metadata block
//! meta       bytes    UTF-8 (the model config text; may be empty)
//! count      u32      number of parameters
//! per parameter:
//!   name_len u32, name bytes (UTF-8)
//!   kind     u8       0 = complex, 1 = real, 2 = buffer
//!   ndim     u32, then ndim × u64 dimensions
//!   real     numel × f64
//!   imag     numel × f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ComplexTensor, ParamKind, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCCRNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(store: &ParamStore, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.kind.code());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.re().iter().chain(p.value.im().iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Contract(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Contract("checkpoint size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Contract(format!("checkpoint string: {e}")))
    }
}

pub fn decode(buf: &[u8]) -> Result<(ParamStore, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Contract("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Contract(format!("unsupported checkpoint version {version}")));
    }
    let meta = r.string()?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let code = r.take(1)?[0];
        let kind = ParamKind::from_code(code)
            .ok_or_else(|| Error::Contract(format!("parameter {name}: unknown kind {code}")))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().product();
        let re = r.f64s(numel)?;
        let im = r.f64s(numel)?;
        if store.find(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter {name} in checkpoint")));
        }
        store.add(name, kind, ComplexTensor::from_vec(&shape, re, im)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Contract(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
    }
    Ok((store, meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: &str) -> Result<()> {
    fs::write(path, encode(store, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParamStore, String)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| Error::data(path, e))
}

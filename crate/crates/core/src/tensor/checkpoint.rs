//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `TTCK`, `u32` version, `u32` metadata length
//! and UTF-8 metadata, `u64` record count, then per record a kind byte
//! (0 = parameter, 1 = buffer), `u32` name length, name, `u32` ndim,
//! `u64` dims and row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::DenseTensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 4] = b"TTCK";
const VERSION: u32 = 1;

/// Parameters plus a free-form metadata string (the model signature).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub store: ParamStore,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_record(buf: &mut Vec<u8>, kind: u8, name: &str, t: &DenseTensor) {
    buf.push(kind);
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.ndim() as u32);
    for &d in t.shape() {
        put_u64(buf, d as u64);
    }
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_u32(&mut buf, self.metadata.len() as u32);
        buf.extend_from_slice(self.metadata.as_bytes());
        let count = self.store.params().count() + self.store.buffers().count();
        put_u64(&mut buf, count as u64);
        for (name, t) in self.store.params() {
            put_record(&mut buf, 0, name, t);
        }
        for (name, t) in self.store.buffers() {
            put_record(&mut buf, 1, name, t);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mlen = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(mlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let count = r.u64()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = DenseTensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            match kind {
                0 => store.insert(name, t),
                1 => store.insert_buffer(name, t),
                k => return Err(Error::Checkpoint(format!("unknown record kind {k}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last record".into()));
        }
        Ok(Self { metadata, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

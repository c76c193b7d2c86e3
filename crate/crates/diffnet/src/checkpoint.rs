//! Versioned little-endian checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "DNETCKPT"
//! version  u32      FORMAT_VERSION
//! count    u32      number of sections
//! section* tag: 4 bytes, length: u64, payload: length bytes
//! ```
//!
//! The `PARM` section holds a parameter table: `u32` entry count, then per
//! entry a `u32` name length, UTF-8 name, `u32` rank, `u64` extents and the
//! values as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DNETCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const PARAMS_TAG: [u8; 4] = *b"PARM";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a section.
    pub fn put(&mut self, tag: [u8; 4], payload: Vec<u8>) {
        match self.sections.iter_mut().find(|(t, _)| *t == tag) {
            Some(slot) => slot.1 = payload,
            None => self.sections.push((tag, payload)),
        }
    }

    pub fn get(&self, tag: [u8; 4]) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, p)| p.as_slice())
    }

    pub fn require(&self, tag: [u8; 4]) -> Result<&[u8]> {
        self.get(tag).ok_or_else(|| {
            Error::Checkpoint(format!(
                "missing section `{}`",
                String::from_utf8_lossy(&tag)
            ))
        })
    }

    pub fn put_params(&mut self, params: &ParamSet) {
        self.put(PARAMS_TAG, encode_params(params));
    }

    pub fn params(&self) -> Result<ParamSet> {
        decode_params(self.require(PARAMS_TAG)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (this build reads {})",
                version, FORMAT_VERSION
            )));
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut tag = [0u8; 4];
            tag.copy_from_slice(r.take(4)?);
            let len = r.u64()? as usize;
            sections.push((tag, r.take(len)?.to_vec()));
        }
        if !r.is_done() {
            return Err(Error::Checkpoint("trailing bytes after last section".into()));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn encode_params(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader::new(bytes);
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f64()?);
        }
        params.insert(name, Tensor::new(&shape, values)?)?;
    }
    if !r.is_done() {
        return Err(Error::Checkpoint("trailing bytes in parameter table".into()));
    }
    Ok(params)
}

/// Bounds-checked little-endian cursor.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {} bytes at offset {}, {} left",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

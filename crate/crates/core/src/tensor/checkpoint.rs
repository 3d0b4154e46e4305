//! Flat binary parameter container.
//!
//! ```text
//! "IIDSU1" | precision tag u8 (4 = f32, 8 = f64) | count u32
//! per tensor: name_len u32 | name bytes (utf-8) | rank u32 | extents u32×rank | values LE
//! ```
//! All integers little-endian.

use std::path::Path;

use super::{Element, Precision, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"IIDSU1";

const MAX_RANK: usize = 8;

/// Ordered named tensors as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Element> {
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Default for Checkpoint<T> {
    fn default() -> Self {
        Checkpoint { tensors: Vec::new() }
    }
}

impl<T: Element> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(T::PRECISION.tag());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6)? != CHECKPOINT_MAGIC {
            return Err(perr("bad magic"));
        }
        let tag = r.take(1)?[0];
        let precision = Precision::from_tag(tag).ok_or_else(|| perr(format!("unknown precision tag {tag}")))?;
        if precision != T::PRECISION {
            return Err(perr(format!(
                "file holds {} values, reader expects {}",
                precision.name(),
                T::PRECISION.name()
            )));
        }
        let count = r.u32()? as usize;
        let width = match precision {
            Precision::F32 => 4,
            Precision::F64 => 8,
        };
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| perr("tensor name is not utf-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(perr(format!("tensor `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| perr(format!("tensor `{name}` extents overflow")))?;
                shape.push(d);
            }
            let nbytes = n
                .checked_mul(width)
                .ok_or_else(|| perr(format!("tensor `{name}` too large")))?;
            let raw = r.take(nbytes)?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            let t = Tensor::new(&shape, data).map_err(|e| perr(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(perr("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { tensors })
    }
}

/// Reads the precision tag without decoding the payload.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    if bytes.len() < 7 || &bytes[..6] != CHECKPOINT_MAGIC {
        return Err(perr("bad magic"));
    }
    Precision::from_tag(bytes[6]).ok_or_else(|| perr(format!("unknown precision tag {}", bytes[6])))
}

pub fn write_checkpoint<T: Element>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    std::fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

fn perr(msg: impl Into<String>) -> Error {
    Error::parse("checkpoint", msg)
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
            .ok_or_else(|| perr(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

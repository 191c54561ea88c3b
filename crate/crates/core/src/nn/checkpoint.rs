//! Binary checkpoint format (little endian):
//!
//! ```text
//! magic "LWCK" | version u32 | dtype u8 (4 = f32, 8 = f64)
//! arch_len u32 | arch JSON
//! epoch u64 | best_epoch u64 | best_val_acc f64
//! n_tensors u32
//! per tensor: name_len u16 | name | ndim u8 | dims u64* | values | sha256[..8] of values
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::arch::ArchConfig;
use super::model::{ModelState, Param, TrainMeta};
use super::real::Real;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LWCK";
const VERSION: u32 = 1;

fn value_bytes<T: Real>(data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * T::DTYPE as usize);
    for &v in data {
        match T::DTYPE {
            4 => out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes()),
            _ => out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes()),
        }
    }
    out
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

pub fn encode_checkpoint<T: Real>(model: &ModelState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    let arch = serde_json::to_vec(model.arch()).expect("arch serializes");
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    out.extend_from_slice(&(model.meta.epoch as u64).to_le_bytes());
    out.extend_from_slice(&(model.meta.best_epoch as u64).to_le_bytes());
    out.extend_from_slice(&model.meta.best_val_acc.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let bytes = value_bytes(&p.data);
        out.extend_from_slice(&bytes);
        out.extend_from_slice(&checksum(&bytes));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Real>(buf: &[u8]) -> Result<ModelState<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let dtype = r.u8()?;
    if dtype != 4 && dtype != 8 {
        return Err(Error::Checkpoint(format!("unknown dtype tag {dtype}")));
    }
    let arch_len = r.u32()? as usize;
    let arch: ArchConfig = serde_json::from_slice(r.take(arch_len)?)
        .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
    let meta = TrainMeta {
        epoch: r.u64()? as usize,
        best_epoch: r.u64()? as usize,
        best_val_acc: r.f64()?,
    };
    let n = r.u32()? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let bytes = r.take(count * dtype as usize)?;
        if r.take(8)? != checksum(bytes) {
            return Err(Error::Checkpoint(format!("checksum mismatch in tensor {name}")));
        }
        let data = if dtype == 4 {
            bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect()
        } else {
            bytes
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        };
        params.push(Param { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    ModelState::from_parts(arch, params, meta)
}

pub fn save_checkpoint<T: Real>(model: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

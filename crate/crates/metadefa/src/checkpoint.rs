//! Versioned binary parameter checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     8 bytes   "MDFACKPT"
//! version   u32       1
//! count     u32       number of tensors
//! count × {
//!   name_len u32, name  UTF-8 bytes
//!   ndim     u32, dims  u64 × ndim
//!   data     f64 × product(dims)   (IEEE-754 bit patterns, so loading is exact)
//! }
//! ```
//!
//! Tensors are stored in name order. Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use metadefa_core::{ParamSet, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MDFACKPT";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let bad = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32().ok_or_else(|| bad("truncated header"))?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let truncated = || bad("truncated tensor record");
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|_| bad("tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64().ok_or_else(truncated)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("tensor size overflows"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if params.contains(&name) {
            return Err(bad(&format!("duplicate tensor `{name}`")));
        }
        params.insert(name, Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::write(dir))?;
    }
    fs::write(path, encode(params)).map_err(Error::write(path))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(Error::read(path))?;
    decode(&bytes, path)
}

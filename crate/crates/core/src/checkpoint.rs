//! Named-tensor checkpoint files.
//!
//! ```text
//! "FCAN" | version: u16 | json_len: u32 | json config (UTF-8)
//! count: u32
//! per tensor: name_len: u32 | name | rank: u32 | extents: rank x u32 | values: f32 x numel
//! ```
//!
//! Every integer and value is little-endian.

use std::fs;
use std::path::Path;

use crate::error::{FcanError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCAN";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.config_json.len());
        out.extend_from_slice(self.config_json.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &e in t.shape() {
                put_u32(&mut out, e);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4, "magic")? != MAGIC {
            return Err(FcanError::format(path, "bad magic, not an FCAN checkpoint"));
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(FcanError::format(
                path,
                format!("unsupported checkpoint version {version}, expected {VERSION}"),
            ));
        }
        let json_len = r.u32("config length")?;
        let config_json = r.utf8(json_len, "config")?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let name_len = r.u32("tensor name length")?;
            let name = r.utf8(name_len, "tensor name")?;
            let rank = r.u32("tensor rank")?;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32("tensor extent")?);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4, "tensor values")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&shape, data)
                .map_err(|e| FcanError::format(path, format!("tensor {i} ({name}): {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(FcanError::format(
                path,
                format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
            ));
        }
        Ok(Checkpoint {
            config_json,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| FcanError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FcanError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FcanError::format(
                self.path,
                format!(
                    "truncated while reading {what}: expected at least {} bytes, file has {}",
                    self.pos.saturating_add(n),
                    self.bytes.len()
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| FcanError::format(self.path, format!("{what} is not UTF-8")))
    }
}

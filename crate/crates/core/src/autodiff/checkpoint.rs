//! Named-tensor container.
//!
//! Layout, all little-endian: magic `RGGC`, version `u32`, entry count `u32`,
//! then per entry a `u16` name length, the UTF-8 name, a `u8` rank, one `u32`
//! per dimension and the `f32` data.

use std::fs;
use std::path::Path;

use super::{AutodiffError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGGC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>, AutodiffError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| AutodiffError::shape(format!("name too long: {name}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| AutodiffError::shape(format!("rank too large for {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| AutodiffError::shape(format!("dimension too large for {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, AutodiffError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Format {
                offset: 0,
                message: "bad magic, expected RGGC".into(),
            });
        }
        let version_at = r.pos;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Format {
                offset: version_at as u64,
                message: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| AutodiffError::Format {
                    offset: name_at as u64,
                    message: "name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ck.push(name, Tensor::new(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(AutodiffError::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(ck)
    }
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), AutodiffError> {
    fs::write(path, ck.encode()?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, AutodiffError> {
    Checkpoint::decode(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(AutodiffError::Format {
            offset: self.bytes.len() as u64,
            message: format!("truncated: need {n} bytes at offset {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

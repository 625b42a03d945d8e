//! Binary checkpoint format.
//!
//! ```text
//! "RSPC"                       4 bytes magic
//! version                      u32 LE
//! architecture                 u64 LE length + UTF-8 JSON
//! metadata                     u64 LE length + UTF-8 JSON
//! parameter count              u64 LE
//! per parameter:
//!   name                       u64 LE length + UTF-8
//!   dtype                      u8 (0 = f32)
//!   rank                       u32 LE
//!   extents                    rank x u64 LE
//!   values                     product(extents) x f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{ArchitectureDescriptor, ParameterSet};
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub const MAGIC: [u8; 4] = *b"RSPC";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub lambda: f64,
    pub epoch: usize,
    pub round: usize,
    /// Accuracy measured when the checkpoint was written, if any.
    #[serde(default)]
    pub accuracy: Option<f64>,
    /// Which split `accuracy` refers to.
    #[serde(default)]
    pub accuracy_split: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: ArchitectureDescriptor,
    pub params: ParameterSet,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(arch: ArchitectureDescriptor, params: ParameterSet, meta: CheckpointMeta) -> Result<Self> {
        arch.validate()?;
        params.check_against(&arch)?;
        Ok(Self {
            version: FORMAT_VERSION,
            arch,
            params,
            meta,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_str(&mut out, &self.arch.to_json());
        put_str(&mut out, &serde_json::to_string(&self.meta).expect("metadata serializes"));
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::Magic { found: magic }.into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                supported: FORMAT_VERSION,
            }
            .into());
        }
        let arch_text = r.string()?;
        let arch: ArchitectureDescriptor = serde_json::from_str(&arch_text)
            .map_err(|e| CheckpointError::Malformed(format!("architecture: {e}")))?;
        arch.validate()
            .map_err(|e| CheckpointError::Malformed(format!("embedded architecture is invalid: {e}")))?;
        let meta: CheckpointMeta = serde_json::from_str(&r.string()?)
            .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
        let count = r.u64()? as usize;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::Malformed(format!("parameter {name}: unknown dtype code {dtype}")).into());
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
                CheckpointError::Malformed(format!("parameter {name}: extents {shape:?} overflow"))
            })?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| CheckpointError::Malformed("size overflow".into()))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::new(shape, values)
                .map_err(|e| CheckpointError::Malformed(format!("parameter {name}: {e}")))?;
            if params.insert(name.clone(), t).is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate parameter {name}")).into());
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        check_shapes(&arch, &params)?;
        Ok(Self {
            version,
            arch,
            params,
            meta,
        })
    }
}

fn check_shapes(arch: &ArchitectureDescriptor, params: &ParameterSet) -> Result<()> {
    for (i, layer) in arch.layers.iter().enumerate() {
        let (Some(ws), Some(bs)) = (layer.weight_shape(), layer.bias_shape()) else {
            continue;
        };
        for (name, expected) in [(crate::nn::weight_key(i), ws), (crate::nn::bias_key(i), bs)] {
            match params.get(&name) {
                Some(t) if t.shape() == expected.as_slice() => {}
                found => {
                    return Err(CheckpointError::Shape {
                        name,
                        expected,
                        found: found.map(|t| t.shape().to_vec()).unwrap_or_default(),
                    }
                    .into())
                }
            }
        }
    }
    params
        .check_against(arch)
        .map_err(|e| CheckpointError::Malformed(e.to_string()).into())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Checkpoint(
            CheckpointError::Truncated {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos).min(n),
            },
        ))?;
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

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|e| CheckpointError::Malformed(format!("invalid UTF-8 at offset {}: {e}", self.pos)).into())
    }
}

/// Writes the checkpoint atomically.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

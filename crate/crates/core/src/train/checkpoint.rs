//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "CSAD" | u32 version | u32 n + n bytes JSON header | u32 tensor count |
//! per tensor: u16 name length, name, u8 dtype (0 = f64), u8 ndim,
//!             ndim × u32 dims, values as f64
//! ```
//!
//! Tensors are the model's named tensors followed by Adam moments stored as
//! `adam.m.<param>` and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use csad_tensor::{AdamState, Moments, Tensor};
use serde::{Deserialize, Serialize};

use super::{Checkpoint, TrainConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::model::Model;

pub const MAGIC: [u8; 4] = *b"CSAD";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    loss_history: Vec<f64>,
    adam: AdamHeader,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

fn malformed(msg: impl Into<String>) -> Error {
    CheckpointError::Malformed(msg.into()).into()
}

/// Serialises a checkpoint to bytes.
pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        loss_history: ckpt.loss_history.clone(),
        adam: AdamHeader {
            lr: ckpt.adam.lr,
            beta1: ckpt.adam.beta1,
            beta2: ckpt.adam.beta2,
            eps: ckpt.adam.eps,
            t: ckpt.adam.t,
        },
    };
    let json = serde_json::to_vec(&header).map_err(|e| malformed(e.to_string()))?;
    let mut tensors: Vec<(String, &Tensor)> = ckpt.model.named_tensors();
    for (name, m) in &ckpt.adam.moments {
        tensors.push((format!("adam.m.{name}"), &m.m));
        tensors.push((format!("adam.v.{name}"), &m.v));
    }

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let len = u32::try_from(json.len()).map_err(|_| malformed("header too large"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| malformed(format!("tensor name {name} too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(u8::try_from(t.ndim()).map_err(|_| malformed("too many dimensions"))?);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| malformed("dimension too large"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parses bytes produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let header_len = c.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(c.take(header_len, "header")?)
        .map_err(|e| malformed(format!("header: {e}")))?;
    let count = c.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = c.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| malformed("tensor name is not UTF-8"))?
            .to_string();
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(CheckpointError::UnsupportedDtype(dtype).into());
        }
        let ndim = c.u8("ndim")? as usize;
        let shape = (0..ndim)
            .map(|_| c.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| malformed(format!("tensor {name} is too large")))?;
        let raw = c.take(numel, "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(&shape, data)?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::DuplicateName(name).into());
        }
    }
    if c.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - c.pos)));
    }

    let mut model = Model::new(header.config.model.clone(), 0)?;
    model.load_tensors(&tensors)?;
    let mut adam = AdamState {
        lr: header.adam.lr,
        beta1: header.adam.beta1,
        beta2: header.adam.beta2,
        eps: header.adam.eps,
        t: header.adam.t,
        moments: BTreeMap::new(),
    };
    let mut known: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    for p in model.params() {
        let m = tensors.get(&format!("adam.m.{}", p.name));
        let v = tensors.get(&format!("adam.v.{}", p.name));
        match (m, v) {
            (Some(m), Some(v)) => {
                for t in [m, v] {
                    if t.shape() != p.value.shape() {
                        return Err(CheckpointError::TensorShape {
                            name: p.name.clone(),
                            expected: p.value.shape().to_vec(),
                            got: t.shape().to_vec(),
                        }
                        .into());
                    }
                }
                adam.moments.insert(
                    p.name.clone(),
                    Moments {
                        m: m.clone(),
                        v: v.clone(),
                    },
                );
                known.push(format!("adam.m.{}", p.name));
                known.push(format!("adam.v.{}", p.name));
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(CheckpointError::MissingTensor(format!("adam.v.{}", p.name)).into())
            }
            (None, Some(_)) => {
                return Err(CheckpointError::MissingTensor(format!("adam.m.{}", p.name)).into())
            }
        }
    }
    if let Some(extra) = tensors.keys().find(|k| !known.contains(k)) {
        return Err(malformed(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint {
        config: header.config,
        model,
        adam,
        epoch: header.epoch,
        loss_history: header.loss_history,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    read_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

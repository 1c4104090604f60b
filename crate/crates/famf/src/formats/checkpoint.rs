//! Model checkpoints.
//!
//! | size      | field                                                   |
//! |-----------|---------------------------------------------------------|
//! | 8         | magic `FAMFCKPT`                                        |
//! | 4         | format version, u32 (currently 1)                       |
//! | 4         | header length `H`, u32                                  |
//! | H         | header, UTF-8 JSON: fingerprint, seed, epoch, model config |
//! | 4         | tensor count `T`, u32                                   |
//! | per tensor| name length u32, UTF-8 name, rank u32, rank × u64 extents, values f64 row-major |
//! | 32        | SHA-256 of every preceding byte                         |
//!
//! Tensors are stored under the names of [`FamfModel::state_dict`], batch
//! norm running statistics included.

use std::path::Path;

use famf_core::model::{FamfConfig, FamfModel};
use famf_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{put_f64s, put_u32, put_u64, to_u32, ByteReader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FAMFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub fingerprint: String,
    pub seed: u64,
    /// Epochs completed.
    pub epoch: usize,
    pub model: FamfConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &FamfModel, fingerprint: &str, seed: u64, epoch: usize) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                fingerprint: fingerprint.to_string(),
                seed,
                epoch,
                model: model.config.clone(),
            },
            tensors: model.state_dict(),
        }
    }

    pub fn to_model(&self) -> Result<FamfModel> {
        let mut model = FamfModel::new(self.header.model.clone(), 0)?;
        model.load_state_dict(&self.tensors)?;
        Ok(model)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let header = serde_json::to_vec(&self.header)?;
        put_u32(&mut out, to_u32(header.len(), "header length")?);
        out.extend_from_slice(&header);
        put_u32(&mut out, to_u32(self.tensors.len(), "tensor count")?);
        for (name, t) in &self.tensors {
            put_u32(&mut out, to_u32(name.len(), "name length")?);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, to_u32(t.shape().len(), "rank")?);
            for &e in t.shape() {
                put_u64(&mut out, e as u64);
            }
            put_f64s(&mut out, t.data());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(r.error_at(0, "not a famf checkpoint (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(8, format!("unsupported checkpoint version {version}")));
        }
        if bytes.len() < 32 + 16 {
            return Err(r.error_at(bytes.len(), "truncated checkpoint"));
        }
        let body = bytes.len() - 32;
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            return Err(r.error_at(body, "checksum mismatch: file is corrupt or truncated"));
        }
        let mut r = ByteReader::new(&bytes[..body], path);
        r.seek(12)?;
        let len = r.u32("header length")? as usize;
        let header_pos = r.pos();
        let header: CheckpointHeader = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| r.error_at(header_pos, format!("bad header: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let pos = r.pos();
            let n = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "tensor name")?)
                .map_err(|_| r.error_at(pos, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("tensor extent")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| r.error_at(pos, format!("tensor `{name}` is too large")))?;
            let data = r.f64s(numel, "tensor values")?;
            let t = Tensor::new(shape, data).map_err(|e| r.error_at(pos, format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(r.error(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Refuses a checkpoint trained under a different config.
    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.header.fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: expected.to_string(),
                found: self.header.fingerprint.clone(),
            });
        }
        Ok(())
    }
}

//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `MAGIC`, `u32` version, `u32` + JSON config, `u32` + JSON metadata,
//! `u64` step, `u32` tensor count, then per tensor `u16` + UTF-8 name,
//! `u8` rank, `u32` per dimension and the `f32` values.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::ModelConfig;
use super::network::OmniGait;
use crate::nn::Module;

pub const MAGIC: &[u8; 8] = b"OMNIGAIT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint was written for a different model config")]
    ConfigMismatch {
        expected: Box<ModelConfig>,
        found: Box<ModelConfig>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Free-form JSON written by the trainer.
    pub meta: serde_json::Value,
    pub step: u64,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Corrupt("truncated".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T, CheckpointError> {
        let n = self.u32()? as usize;
        serde_json::from_slice(self.take(n)?).map_err(|e| CheckpointError::Corrupt(format!("{what}: {e}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for json in [
            serde_json::to_vec(&self.config).expect("config serializes"),
            serde_json::to_vec(&self.meta).expect("json value serializes"),
        ] {
            out.extend_from_slice(&(json.len() as u32).to_le_bytes());
            out.extend_from_slice(&json);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::Corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
        }
        let config: ModelConfig = r.json("config")?;
        let meta = r.json("metadata")?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l.checked_mul(4).is_some_and(|b| b <= r.buf.len()))
                .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape {shape:?} exceeds file")))?;
            let data = r
                .take(len * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length checked");
            tensors.push((name, t));
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Checkpoint {
            config,
            meta,
            step,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Tensors whose name starts with `prefix`, prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, &ArrayD<f32>> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|k| (k.to_string(), t)))
            .collect()
    }
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub const MODEL_PREFIX: &str = "model.";

impl OmniGait<f32> {
    /// Parameters and running statistics under [`MODEL_PREFIX`].
    pub fn state_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((format!("{MODEL_PREFIX}{name}"), p.value.clone())));
        out
    }

    /// Overwrites every parameter from `ckpt`; the set of names and shapes
    /// has to match exactly.
    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
        if &ckpt.config != self.config() {
            return Err(CheckpointError::ConfigMismatch {
                expected: Box::new(self.config().clone()),
                found: Box::new(ckpt.config.clone()),
            });
        }
        let mut saved = ckpt.section(MODEL_PREFIX);
        let mut problem = None;
        self.visit_mut("", &mut |name, p| {
            if problem.is_some() {
                return;
            }
            match saved.remove(name) {
                None => problem = Some(format!("missing tensor {name}")),
                Some(t) if t.shape() != p.shape() => {
                    problem = Some(format!("{name}: shape {:?}, expected {:?}", t.shape(), p.shape()))
                }
                Some(t) => p.value.assign(t),
            }
        });
        if let Some(msg) = problem {
            return Err(CheckpointError::Corrupt(msg));
        }
        if let Some(extra) = saved.keys().next() {
            return Err(CheckpointError::Corrupt(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, CheckpointError> {
        let mut model = OmniGait::new(ckpt.config.clone(), 0)
            .map_err(|e| CheckpointError::Corrupt(format!("stored config: {e}")))?;
        model.load_state(ckpt)?;
        Ok(model)
    }
}

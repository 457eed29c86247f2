//! Versioned binary checkpoints with a configuration echo and a digest.
//!
//! Layout (little-endian): magic, `u32` version, `u8` kind, `u32` length +
//! configuration JSON, `u32` tensor count, then per tensor a `u32` length +
//! UTF-8 name, `u32` rank, `u64` dims and `f32` data. A SHA-256 of all
//! preceding bytes closes the file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::Params;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CVEGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Generator,
    Discriminator,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Generator => 0,
            ModelKind::Discriminator => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(ModelKind::Generator),
            1 => Ok(ModelKind::Discriminator),
            _ => Err(Error::Checkpoint(format!("unknown model kind {c}"))),
        }
    }
}

/// A named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: NetConfig,
    pub tensors: Vec<StoredTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
    }
}

impl Checkpoint {
    pub fn from_params(kind: ModelKind, config: &NetConfig, params: &Params<f32>) -> Self {
        let tensors = params
            .iter()
            .map(|(name, v)| {
                let t = v.tensor();
                StoredTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.to_vec(),
                }
            })
            .collect();
        Checkpoint {
            kind,
            config: config.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        put_str(&mut out, &serde_json::to_string(&self.config)?);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("digest mismatch (corrupted file)".into()));
        }
        let mut r = Reader {
            buf: body,
            pos: CHECKPOINT_MAGIC.len(),
        };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let kind = ModelKind::from_code(r.take(1)?[0])?;
        let config: NetConfig = serde_json::from_str(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(StoredTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint { kind, config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies stored tensors into `params` after checking that kind,
    /// configuration and the full name/shape layout match.
    pub fn apply(&self, kind: ModelKind, config: &NetConfig, params: &Params<f32>) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("checkpoint holds a {:?}, expected {kind:?}", self.kind)));
        }
        if &self.config != config {
            return Err(Error::Checkpoint(format!(
                "configuration mismatch: checkpoint {:?}, model {config:?}",
                self.config
            )));
        }
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (t, (name, var)) in self.tensors.iter().zip(params.iter()) {
            if t.name != name || t.shape != var.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match model `{name}` {:?}",
                    t.name,
                    t.shape,
                    var.shape()
                )));
            }
        }
        for (t, (_, var)) in self.tensors.iter().zip(params.iter()) {
            var.set_data(t.data.clone())?;
        }
        Ok(())
    }
}

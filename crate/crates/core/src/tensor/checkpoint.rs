//! Named-tensor checkpoint container.
//!
//! Layout: 8-byte magic, u32 little-endian JSON length, JSON metadata, u32
//! tensor count, then per tensor: u32 name length, name bytes, u32 ndim,
//! ndim u32 dims, raw little-endian f32 data. Tensors are written sorted by
//! name so identical state serializes to identical bytes.

use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TSQCKPT1";

/// Metadata block binding weights to the data they were trained on.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Model family, e.g. "tabbert", "tabgpt", "features", "head".
    pub kind: String,
    /// Fingerprint of the vocab/quantizer pair the model is bound to.
    pub vocab_fingerprint: String,
    /// Flat hyperparameter map (stable ordering for byte-identical output).
    pub hyperparams: BTreeMap<String, serde_json::Value>,
    /// Upstream artifact hashes forming the provenance chain.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(kind: &str, vocab_fingerprint: &str) -> Self {
        CheckpointMeta {
            format_version: 1,
            kind: kind.to_string(),
            vocab_fingerprint: vocab_fingerprint.to_string(),
            hyperparams: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.hyperparams.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Checkpoint {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: &Tensor<f32>) {
        self.tensors
            .insert(name.to_string(), (tensor.shape().to_vec(), tensor.to_vec()));
    }

    pub fn insert_raw(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.insert(name.to_string(), (shape, data));
    }

    pub fn get(&self, name: &str) -> Result<&(Vec<usize>, Vec<f32>)> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Model(format!("checkpoint is missing tensor '{name}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let meta_len = read_u32(&mut cur)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        cur.read_exact(&mut meta_buf)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)?;
        if meta.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported checkpoint format version {}",
                meta.format_version
            )));
        }
        let count = read_u32(&mut cur)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut cur)? as usize;
            let mut name_buf = vec![0u8; name_len];
            cur.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            let ndim = read_u32(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut cur)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut fbuf = [0u8; 4];
            for _ in 0..n {
                cur.read_exact(&mut fbuf)?;
                data.push(f32::from_le_bytes(fbuf));
            }
            tensors.insert(name, (shape, data));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Load and reject on vocab fingerprint mismatch.
    pub fn load_expecting(path: &Path, vocab_fingerprint: &str) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.check_fingerprint(vocab_fingerprint)?;
        Ok(ckpt)
    }

    pub fn check_fingerprint(&self, vocab_fingerprint: &str) -> Result<()> {
        if self.meta.vocab_fingerprint != vocab_fingerprint {
            return Err(Error::Fingerprint(format!(
                "checkpoint was built against vocab {} but current vocab is {}",
                self.meta.vocab_fingerprint, vocab_fingerprint
            )));
        }
        Ok(())
    }
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let meta = CheckpointMeta::new("tabbert", "abc123").with_param("layers", 2);
        let mut ckpt = Checkpoint::new(meta);
        ckpt.insert("w.a", &Tensor::from_vec(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]));
        ckpt.insert("w.b", &Tensor::from_vec(&[3], vec![-1.0f32, 0.5, 9.25]));
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.tensors, ckpt.tensors);
    }

    #[test]
    fn serialization_is_deterministic() {
        let build = || {
            let mut ckpt = Checkpoint::new(CheckpointMeta::new("t", "fp"));
            // insertion order differs; byte output must not
            ckpt.insert_raw("zz", vec![1], vec![1.0]);
            ckpt.insert_raw("aa", vec![1], vec![2.0]);
            ckpt
        };
        let mut other = Checkpoint::new(CheckpointMeta::new("t", "fp"));
        other.insert_raw("aa", vec![1], vec![2.0]);
        other.insert_raw("zz", vec![1], vec![1.0]);
        assert_eq!(build().to_bytes().unwrap(), other.to_bytes().unwrap());
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let ckpt = Checkpoint::new(CheckpointMeta::new("t", "right"));
        assert!(ckpt.check_fingerprint("right").is_ok());
        assert!(ckpt.check_fingerprint("wrong").is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT....").is_err());
    }
}

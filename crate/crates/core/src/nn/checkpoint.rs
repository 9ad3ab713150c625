use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Module;
use crate::tensor::{Element, NdArray};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGNPAINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Named f32 tensors plus free-form JSON metadata.
///
/// Layout: magic, `u32` version, `u64` manifest length, JSON manifest, then
/// the raw little-endian tensor data back to back.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, NdArray<f32>>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Checkpoint { metadata, tensors: BTreeMap::new() }
    }

    pub fn insert_module<T: Element>(&mut self, prefix: &str, module: &dyn Module<T>) {
        for (name, t, _) in module.named_state() {
            self.tensors.insert(super::join(prefix, &name), t.value().cast());
        }
    }

    /// Copies every tensor the module owns out of the checkpoint. Missing
    /// names and shape mismatches are errors.
    pub fn load_module<T: Element>(&self, prefix: &str, module: &dyn Module<T>) -> Result<()> {
        for (name, t, _) in module.named_state() {
            let key = super::join(prefix, &name);
            let stored = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{key}` has shape {:?}, model expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            t.set_value(stored.cast())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(Entry { name: name.clone(), shape: t.shape().to_vec(), offset, len: t.numel() });
            offset += t.numel();
        }
        let manifest = Manifest { version: CHECKPOINT_VERSION, metadata: self.metadata.clone(), tensors: entries };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let data = &bytes[20 + len..];
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            let raw = data
                .get(e.offset * 4..(e.offset + e.len) * 4)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for `{}`", e.name)))?;
            let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.insert(e.name, NdArray::new(&e.shape, vals)?);
        }
        Ok(Checkpoint { metadata: manifest.metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNorm2d, Conv2d};
    use crate::tensor::ConvSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f32>::new(ConvSpec::new(2, 3, 3), true, &mut rng);
        let mut ck = Checkpoint::new(serde_json::json!({"step": 7}));
        ck.insert_module("enc", &conv);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.metadata["step"], 7);
        let other = Conv2d::<f32>::new(ConvSpec::new(2, 3, 3), true, &mut rng);
        back.load_module("enc", &other).unwrap();
        assert_eq!(other.weight.value().data(), conv.weight.value().data());
    }

    #[test]
    fn missing_and_mismatched_tensors_fail() {
        let ck = Checkpoint::new(serde_json::Value::Null);
        let bn = BatchNorm2d::<f32>::new(4);
        assert!(matches!(ck.load_module("x", &bn), Err(Error::Checkpoint(_))));
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.insert_module("x", &BatchNorm2d::<f32>::new(3));
        assert!(matches!(ck.load_module("x", &bn), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"hello world, not a checkpoint").is_err());
    }
}

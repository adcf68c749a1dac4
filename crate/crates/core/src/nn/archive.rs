//! Manifest + raw array storage shared by checkpoints, catalogs and users.
//!
//! `<stem>.json` lists every tensor with its shape and byte offset into
//! `<stem>.bin`, which holds the concatenated little-endian `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    data_file: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub seed: u64,
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl TensorArchive {
    pub fn new(seed: u64, metadata: serde_json::Value, tensors: Vec<NamedTensor>) -> Self {
        Self {
            seed,
            metadata,
            tensors,
        }
    }

    pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
        dir.join(format!("{stem}.json"))
    }

    pub fn data_path(dir: &Path, stem: &str) -> PathBuf {
        dir.join(format!("{stem}.bin"))
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Writes `<stem>.json` and `<stem>.bin` under `dir`; returns both paths.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::Shape(format!(
                    "tensor `{}` has {} values for shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                )));
            }
            let offset = data.len() as u64;
            for v in &t.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                bytes: data.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            format_version: ARCHIVE_FORMAT_VERSION,
            seed: self.seed,
            data_file: format!("{stem}.bin"),
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let manifest_path = Self::manifest_path(dir, stem);
        let data_path = Self::data_path(dir, stem);
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(&manifest_path, json)?;
        fs::write(&data_path, data)?;
        Ok((manifest_path, data_path))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let text = fs::read_to_string(Self::manifest_path(dir, stem))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let data = fs::read(dir.join(&manifest.data_file))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let len: usize = e.shape.iter().product();
            let (start, end) = (e.offset as usize, (e.offset + e.bytes) as usize);
            if e.bytes as usize != len * 8 || end > data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has an invalid byte range {start}..{end}",
                    e.name
                )));
            }
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        Ok(Self {
            seed: manifest.seed,
            metadata: manifest.metadata,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let weird = vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0, f64::MAX, 1e-300];
        let archive = TensorArchive::new(
            42,
            serde_json::json!({"note": "x"}),
            vec![
                NamedTensor {
                    name: "a".into(),
                    shape: vec![5],
                    data: weird.clone(),
                },
                NamedTensor {
                    name: "b".into(),
                    shape: vec![2, 1],
                    data: vec![7.0, -8.5],
                },
            ],
        );
        archive.save(dir.path(), "ckpt").unwrap();
        let back = TensorArchive::load(dir.path(), "ckpt").unwrap();
        assert_eq!(back.seed, 42);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.get("a").unwrap().data), bits(&weird));
        assert_eq!(back.get("b").unwrap().shape, vec![2, 1]);
        assert_eq!(back.metadata["note"], "x");
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("ckpt.json")).unwrap()).unwrap();
        assert_eq!(manifest["tensors"][1]["offset"], 40);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let archive = TensorArchive::new(
            0,
            serde_json::Value::Null,
            vec![NamedTensor {
                name: "a".into(),
                shape: vec![2],
                data: vec![1.0, 2.0],
            }],
        );
        archive.save(dir.path(), "c").unwrap();
        fs::write(dir.path().join("c.bin"), [0u8; 9]).unwrap();
        assert!(matches!(TensorArchive::load(dir.path(), "c"), Err(Error::Checkpoint(_))));
    }
}

//! Tensor container: a directory holding `manifest.json` plus one raw
//! little-endian `f32` file per tensor, row-major.
//!
//! ```text
//! weights/
//!   manifest.json      {"format": "dropforge-tensors", "version": 1, "dtype": "f32",
//!                       "meta": {...}, "tensors": [{"name", "shape", "dtype", "file"}]}
//!   pool_q.w.bin
//!   ffn.type.w1.bin
//!   ...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FORMAT: &str = "dropforge-tensors";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(m: &Matrix) -> Self {
        Tensor {
            shape: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }
}

/// In-memory view of a tensor directory, keyed by tensor name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    pub meta: BTreeMap<String, serde_json::Value>,
    tensors: BTreeMap<String, Tensor>,
    path: PathBuf,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.insert(name, Tensor::vector(v.to_vec()));
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.insert(name, Tensor::matrix(m));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    fn err(&self, message: String) -> Error {
        Error::Store {
            path: self.path.clone(),
            message,
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| self.err(format!("missing tensor `{name}`")))
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 {
            return Err(self.err(format!("`{name}` has shape {:?}, expected a vector", t.shape)));
        }
        Ok(t.data.clone())
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.get(name)?;
        if t.shape.len() != 2 {
            return Err(self.err(format!("`{name}` has shape {:?}, expected a matrix", t.shape)));
        }
        Matrix::new(t.shape[0], t.shape[1], t.data.clone())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let file = format!("{name}.bin");
            let mut bytes = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            fs::write(dir.join(&file), bytes)?;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
                file,
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            dtype: "f32".into(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let store_err = |message: String| Error::Store {
            path: dir.to_path_buf(),
            message,
        };
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(store_err(format!(
                "unsupported container {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut tensors = BTreeMap::new();
        for entry in manifest.tensors {
            if entry.dtype != "f32" {
                return Err(store_err(format!("`{}` has dtype {}", entry.name, entry.dtype)));
            }
            let bytes = fs::read(dir.join(&entry.file))?;
            let numel: usize = entry.shape.iter().product();
            if bytes.len() != numel * 4 {
                return Err(store_err(format!(
                    "`{}` holds {} bytes, shape {:?} needs {}",
                    entry.name,
                    bytes.len(),
                    entry.shape,
                    numel * 4
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(store_err(format!("`{}` contains non-finite values", entry.name)));
            }
            tensors.insert(
                entry.name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            );
        }
        Ok(TensorStore {
            meta: manifest.meta,
            tensors,
            path: dir.to_path_buf(),
        })
    }
}

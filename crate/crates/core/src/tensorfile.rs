// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named-tensor container used for model weights and frozen probes.
//!
//! Layout: an 8-byte little-endian header length `n`, then `n` bytes of
//! JSON `{"metadata": {...}, "tensors": {name: {"shape": [..], "offset": k}}}`,
//! then the concatenated tensor payloads as little-endian `f32`. Offsets
//! count elements from the start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(LabError::Validation(format!(
                "tensor shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: BTreeMap<String, Entry>,
}

/// An ordered map of named tensors plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl TensorFile {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| LabError::parse("tensor file", format!("missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = BTreeMap::new();
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.insert(
                name.clone(),
                Entry {
                    shape: t.shape.clone(),
                    offset,
                },
            );
            offset += t.data.len();
        }
        let header = Header {
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + offset * 4);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| LabError::parse("tensor file", m);
        if bytes.len() < 8 {
            return Err(err("truncated header length"));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let payload_start = 8usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| err("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[8..payload_start])
            .map_err(|e| LabError::parse("tensor file header", e))?;
        let payload = &bytes[payload_start..];
        if !payload.len().is_multiple_of(4) {
            return Err(err("payload is not a whole number of f32 values"));
        }
        let n_floats = payload.len() / 4;
        let mut tensors = BTreeMap::new();
        for (name, entry) in header.tensors {
            let len: usize = entry.shape.iter().product();
            let end = entry
                .offset
                .checked_add(len)
                .filter(|&e| e <= n_floats)
                .ok_or_else(|| err("tensor extends past payload"))?;
            let data = payload[entry.offset * 4..end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(
                name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            );
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_roundtrip(a in proptest::collection::vec(-1e6f32..1e6, 0..40),
                           b in proptest::collection::vec(-1.0f32..1.0, 1..10)) {
            let mut f = TensorFile { metadata: serde_json::json!({"k": 1}), ..Default::default() };
            f.insert("a", Tensor::new(vec![a.len()], a).unwrap());
            f.insert("b", Tensor::new(vec![1, b.len()], b).unwrap());
            prop_assert_eq!(TensorFile::from_bytes(&f.to_bytes()).unwrap(), f);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut f = TensorFile::default();
        f.insert("a", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let bytes = f.to_bytes();
        assert!(TensorFile::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(TensorFile::from_bytes(&bytes[..4]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}

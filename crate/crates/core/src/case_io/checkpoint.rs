//! Versioned single-file container for model parameters.
//!
//! Layout: 8-byte magic `GRIDFLOW`, little-endian `u32` format version,
//! little-endian `u64` manifest length, the JSON manifest, then every array's
//! values as little-endian `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CaseError;

pub const MAGIC: &[u8; 8] = b"GRIDFLOW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        NamedArray { name: name.into(), shape, data }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&NamedArray, CaseError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CaseError::ShapeMismatch(format!("checkpoint has no array {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CaseError> {
        for a in &self.arrays {
            if a.numel() != a.data.len() {
                return Err(CaseError::ShapeMismatch(format!(
                    "array {} has {} values for shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self.arrays.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let total: usize = self.arrays.iter().map(|a| a.data.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CaseError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CaseError::MalformedBlock("not a gridflow checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CaseError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + len)
            .ok_or_else(|| CaseError::MalformedBlock("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CaseError::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut offset = 20 + len;
        let mut arrays = manifest.arrays;
        for a in &mut arrays {
            let n = a.numel();
            let raw = bytes.get(offset..offset + 8 * n).ok_or_else(|| {
                CaseError::ShapeMismatch(format!("array {} truncated (shape {:?})", a.name, a.shape))
            })?;
            a.data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(CaseError::ShapeMismatch(format!(
                "{} trailing bytes after the last array",
                bytes.len() - offset
            )));
        }
        Ok(Checkpoint { kind: manifest.kind, meta: manifest.meta, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CaseError> {
        super::write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CaseError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: "test".into(),
            meta: serde_json::json!({"lr": 1e-3, "widths": [4, 5]}),
            arrays: vec![
                NamedArray::new("w", vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 0.1]),
                NamedArray::new("b", vec![3], vec![1e300, -2.5, 7.0]),
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.arrays[0].data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CaseError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_data_is_shape_mismatch() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
            Err(CaseError::ShapeMismatch(_))
        ));
    }
}

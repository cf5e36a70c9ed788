//! Directory-of-arrays format shared by pretrained weight bundles and
//! checkpoints.
//!
//! ```text
//! <dir>/manifest.json       {"format": "fgseg-arrays", "version": 1, "arrays": [...]}
//! <dir>/<name>.bin          raw little-endian f32, row-major
//! ```
//!
//! Every manifest entry carries `name`, `shape`, `dtype` (only `"f32"`) and
//! `file` (relative to the directory).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const BUNDLE_FORMAT: &str = "fgseg-arrays";
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{path}: bundle version {found} is not supported (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("array `{name}`: {reason}")]
    Array { name: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named `f32` arrays; iteration order is by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayBundle {
    pub arrays: BTreeMap<String, Array>,
}

fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.bin")
}

impl ArrayBundle {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.arrays.insert(name.into(), Array { shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.get(name)
    }

    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, arr) in &self.arrays {
            let file = file_name(name);
            let path = dir.join(&file);
            let mut bytes = Vec::with_capacity(arr.data.len() * 4);
            for v in &arr.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(&path, bytes).map_err(io_err(&path))?;
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: arr.shape.clone(),
                dtype: "f32".into(),
                file,
            });
        }
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            arrays: entries,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| BundleError::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(BundleError::Manifest {
                path,
                reason: format!("unknown format `{}`", manifest.format),
            });
        }
        if manifest.version != BUNDLE_VERSION {
            return Err(BundleError::Version {
                path,
                found: manifest.version,
                expected: BUNDLE_VERSION,
            });
        }
        let mut bundle = ArrayBundle::default();
        for entry in manifest.arrays {
            if entry.dtype != "f32" {
                return Err(BundleError::Array {
                    name: entry.name,
                    reason: format!("unsupported dtype `{}`", entry.dtype),
                });
            }
            let file = dir.join(&entry.file);
            let bytes = fs::read(&file).map_err(io_err(&file))?;
            let expected: usize = entry.shape.iter().product();
            if bytes.len() != expected * 4 {
                return Err(BundleError::Array {
                    name: entry.name,
                    reason: format!(
                        "{} bytes on disk, shape {:?} needs {}",
                        bytes.len(),
                        entry.shape,
                        expected * 4
                    ),
                });
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            bundle.insert(entry.name, entry.shape, data);
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ArrayBundle::default();
        b.insert("block1_conv1.weight", vec![2, 1, 1, 1], vec![f32::MIN_POSITIVE, -0.0]);
        b.insert("odd/name", vec![3], vec![1.5, f32::MAX, 1e-30]);
        b.write(dir.path()).unwrap();
        let back = ArrayBundle::read(dir.path()).unwrap();
        for (name, arr) in &b.arrays {
            let other = back.get(name).unwrap();
            assert_eq!(arr.shape, other.shape);
            let bits: Vec<u32> = arr.data.iter().map(|v| v.to_bits()).collect();
            let obits: Vec<u32> = other.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, obits);
        }
    }

    #[test]
    fn truncated_array_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ArrayBundle::default();
        b.insert("a", vec![4], vec![0.0; 4]);
        b.write(dir.path()).unwrap();
        fs::write(dir.path().join("a.bin"), [0u8; 8]).unwrap();
        assert!(matches!(ArrayBundle::read(dir.path()), Err(BundleError::Array { .. })));
    }
}

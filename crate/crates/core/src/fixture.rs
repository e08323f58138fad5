//! `.tns` tensor fixtures: a JSON manifest next to a raw little-endian
//! row-major payload.
//!
//! ```json
//! {"dtype": "f32", "shape": [2, 3], "data": "weights.bin"}
//! ```
//!
//! `data` is resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TnsManifest {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: String,
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * T::DTYPE.size_of());
    for &v in t.as_slice() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode<T: Element>(shape: Vec<usize>, bytes: &[u8]) -> Result<Tensor<T>> {
    let width = T::DTYPE.size_of();
    if bytes.len() % width != 0 {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a multiple of {width}",
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(width).map(T::read_le).collect();
    Tensor::from_vec(shape, data).map_err(|e| Error::Format(e.to_string()))
}

fn payload_name(manifest: &Path) -> Result<String> {
    let stem = manifest
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad fixture path {}", manifest.display())))?;
    Ok(format!("{stem}.bin"))
}

/// Writes `path` (the manifest) and a sibling `<stem>.bin` payload.
pub fn save<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let data = payload_name(path)?;
    let manifest = TnsManifest {
        dtype: T::DTYPE,
        shape: t.shape().to_vec(),
        data: data.clone(),
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    fs::write(dir.join(&data), encode(t))?;
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<TnsManifest> {
    let text = fs::read(path.as_ref())?;
    serde_json::from_slice(&text).map_err(|e| {
        Error::Format(format!("{}: {e}", path.as_ref().display()))
    })
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "{} holds {} data, expected {}",
            path.display(),
            manifest.dtype,
            T::DTYPE
        )));
    }
    let payload: PathBuf = path.parent().unwrap_or(Path::new("")).join(&manifest.data);
    decode(manifest.shape, &fs::read(payload)?)
}

//! Binary container for named `f32` tensors plus a JSON metadata header.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, UTF-8 JSON
//! header, then every tensor's values as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPCGCKPT";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorArchive {
    pub meta: serde_json::Value,
    pub tensors: Vec<ArchiveTensor>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<IndexEntry>,
}

pub fn write_archive(path: &Path, archive: &TensorArchive) -> Result<()> {
    let header = Header {
        meta: archive.meta.clone(),
        tensors: archive
            .tensors
            .iter()
            .map(|t| IndexEntry {
                name: t.name.clone(),
                shape: t.shape,
            })
            .collect(),
    };
    for t in &archive.tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!("tensor `{}` does not fill {:?}", t.name, t.shape)));
        }
    }
    let json = serde_json::to_vec(&header)?;
    let total: usize = archive.tensors.iter().map(|t| t.data.len()).sum();
    let mut bytes = Vec::with_capacity(20 + json.len() + 4 * total);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in &archive.tensors {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<TensorArchive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: ARCHIVE_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
    let mut data = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        if data.len() < 4 * n {
            return Err(bad(&format!("truncated data for `{}`", entry.name)));
        }
        let values = data[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        data = &data[4 * n..];
        tensors.push(ArchiveTensor {
            name: entry.name,
            shape: entry.shape,
            data: values,
        });
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(TensorArchive {
        meta: header.meta,
        tensors,
    })
}

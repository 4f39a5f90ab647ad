use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GrayImage, LesionClass, PairedSample, Provenance, SegMask};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One sample on disk. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub lesion_class: LesionClass,
    #[serde(default)]
    pub provenance: Provenance,
    pub spacing: f64,
    pub image_sha256: String,
    pub mask_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub split: Split,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|e| e.id.as_str()).collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Maps `[-1, 1]` onto the full 16-bit range.
fn encode_u16(v: f32) -> u16 {
    (((v as f64 + 1.0) / 2.0 * 65535.0).round()).clamp(0.0, 65535.0) as u16
}

fn decode_u16(v: u16) -> f32 {
    (v as f64 / 65535.0 * 2.0 - 1.0) as f32
}

fn png_bytes(width: usize, height: usize, data: Vec<u16>, path: &Path) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data).ok_or_else(|| Error::Image {
            path: path.to_path_buf(),
            reason: "buffer size mismatch".into(),
        })?;
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(out.into_inner())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an image as a 16-bit grayscale PNG; returns the encoded bytes.
pub fn write_image_png(img: &GrayImage, path: &Path) -> Result<Vec<u8>> {
    let data = img.data().iter().map(|&v| encode_u16(v)).collect();
    let bytes = png_bytes(img.width(), img.height(), data, path)?;
    write_file(path, &bytes)?;
    Ok(bytes)
}

/// Writes a mask as a 16-bit grayscale PNG (0 or 65535 for binary masks).
pub fn write_mask_png(mask: &SegMask, path: &Path) -> Result<Vec<u8>> {
    let data = mask
        .data()
        .iter()
        .map(|&v| (v as f64 * 65535.0).round() as u16)
        .collect();
    let bytes = png_bytes(mask.width(), mask.height(), data, path)?;
    write_file(path, &bytes)?;
    Ok(bytes)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    let luma = img.into_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    Ok((w, h, luma.into_raw()))
}

pub fn read_image_png(path: &Path, spacing: f64) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, raw) = decode_png(&bytes, path)?;
    GrayImage::new(w, h, spacing, raw.into_iter().map(decode_u16).collect())
}

pub fn read_mask_png(path: &Path) -> Result<SegMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, raw) = decode_png(&bytes, path)?;
    let soft = raw.into_iter().map(|v| v as f32 / 65535.0).collect();
    Ok(SegMask::soft(w, h, soft)?.binarize(0.5))
}

/// Writes rasters under `dir/<split>/` and the manifest as `dir/<split>.json`.
pub fn save_dataset(
    dir: &Path,
    split: Split,
    seed: u64,
    samples: &[PairedSample],
) -> Result<(DatasetManifest, PathBuf)> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::validation("id", format!("duplicate sample id `{}`", s.id)));
        }
        let image = PathBuf::from(split.as_str()).join(format!("{}_image.png", s.id));
        let mask = PathBuf::from(split.as_str()).join(format!("{}_mask.png", s.id));
        let ib = write_image_png(&s.image, &dir.join(&image))?;
        let mb = write_mask_png(&s.mask, &dir.join(&mask))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            image,
            mask,
            lesion_class: s.lesion_class,
            provenance: s.provenance,
            spacing: s.image.spacing(),
            image_sha256: sha256_hex(&ib),
            mask_sha256: sha256_hex(&mb),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        split,
        seed,
        samples: entries,
    };
    let path = dir.join(format!("{}.json", split.as_str()));
    save_manifest(&manifest, &path)?;
    Ok((manifest, path))
}

pub fn save_manifest(ds: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(ds)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn verify(base: &Path, id: &str, rel: &Path, expected: &str) -> Result<Vec<u8>> {
    let path = base.join(rel);
    let bytes = fs::read(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile {
                id: id.to_string(),
                path: path.clone(),
            }
        } else {
            Error::io(&path, e)
        }
    })?;
    if sha256_hex(&bytes) != expected {
        return Err(Error::ChecksumMismatch {
            id: id.to_string(),
            path,
        });
    }
    Ok(bytes)
}

/// Reads a manifest and checks its version, id uniqueness, and that every
/// referenced file exists with the recorded checksum.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != MANIFEST_VERSION as u64 {
            return Err(Error::VersionMismatch {
                found: v as u32,
                expected: MANIFEST_VERSION,
            });
        }
    }
    let ds: DatasetManifest = serde_json::from_value(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = base_dir(path);
    let mut seen = HashSet::new();
    for e in &ds.samples {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::validation("id", format!("duplicate sample id `{}`", e.id)));
        }
        verify(&base, &e.id, &e.image, &e.image_sha256)?;
        verify(&base, &e.id, &e.mask, &e.mask_sha256)?;
    }
    Ok(ds)
}

/// Loads a manifest together with its decoded samples.
pub fn load_samples(path: &Path) -> Result<(DatasetManifest, Vec<PairedSample>)> {
    let ds = load_manifest(path)?;
    let base = base_dir(path);
    let samples = ds
        .samples
        .iter()
        .map(|e| {
            let image = read_image_png(&base.join(&e.image), e.spacing)?;
            let mask = read_mask_png(&base.join(&e.mask))?;
            PairedSample::new(e.id.clone(), image, mask, e.lesion_class, e.provenance)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ds, samples))
}

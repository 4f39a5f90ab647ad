//! Synthetic ultrasound phantoms and the data pipeline around them:
//! generation, resampling, ROI cropping, augmentation and on-disk datasets.

mod augment;
mod generate;
mod manifest;
mod preprocess;

pub use augment::{augment, augment_with, AugConfig, AugParams};
pub use generate::{generate_phantom, PhantomSpec};
pub use manifest::{
    load_manifest, load_samples, read_image_png, read_mask_png, save_dataset, save_manifest,
    write_image_png, write_mask_png, DatasetManifest, ManifestEntry, Split, MANIFEST_VERSION,
};
pub use preprocess::{crop_roi, crop_roi_mask, resample, resample_mask, resample_with_cap, MAX_DIMENSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel image with isotropic pixel spacing, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    spacing: f64,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, spacing: f64, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("dimensions", "width and height must be >= 1"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::validation("spacing", format!("must be > 0, got {spacing}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && v.abs() <= 1.0)) {
            return Err(Error::validation("values", format!("{v} outside [-1, 1]")));
        }
        Ok(Self {
            width,
            height,
            spacing,
            data,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[-1, 1]`.
    pub fn from_clamped(width: usize, height: usize, spacing: f64, data: Vec<f32>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
            .collect();
        Self::new(width, height, spacing, data)
    }

    pub fn filled(width: usize, height: usize, spacing: f64, value: f32) -> Result<Self> {
        Self::new(width, height, spacing, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Segmentation map aligned with a [`GrayImage`], values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
    binarized: bool,
}

impl SegMask {
    /// A binary mask from booleans.
    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} mask",
                bits.len()
            )));
        }
        Self::binary(width, height, bits.iter().map(|&b| b as u8 as f32).collect())
    }

    /// A binary mask; every value must be exactly 0 or 1.
    pub fn binary(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::validation("mask", format!("non-binary value {v}")));
        }
        Self::build(width, height, data, true)
    }

    /// A soft (probabilistic) mask with values in `[0, 1]`.
    pub fn soft(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation("mask", format!("value {v} outside [0, 1]")));
        }
        Self::build(width, height, data, false)
    }

    fn build(width: usize, height: usize, data: Vec<f32>, binarized: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("dimensions", "width and height must be >= 1"));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            binarized,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::binary(width, height, vec![0.0; width * height])
    }

    /// Thresholds a soft mask at `threshold` (inclusive above).
    pub fn binarize(&self, threshold: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
            binarized: true,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.get(row, col) >= 0.5
    }

    /// Number of foreground pixels (value >= 0.5).
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    /// Foreground centroid as `(row, col)`, if any.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for (i, &v) in self.data.iter().enumerate() {
            if v >= 0.5 {
                sr += (i / self.width) as f64;
                sc += (i % self.width) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }

    /// The complement of a binary mask.
    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1.0 - v).collect(),
            binarized: self.binarized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionClass {
    Benign,
    Malignant,
}

impl LesionClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            LesionClass::Benign => "benign",
            LesionClass::Malignant => "malignant",
        }
    }
}

impl std::str::FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(LesionClass::Benign),
            "malignant" => Ok(LesionClass::Malignant),
            other => Err(Error::validation("lesion_class", format!("unknown class `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Synthetic,
    External,
}

/// An image, its reference segmentation and the lesion label.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub image: GrayImage,
    pub mask: SegMask,
    pub lesion_class: LesionClass,
    pub provenance: Provenance,
}

impl PairedSample {
    /// Checks the pairing invariants: matching dimensions, binary mask, non-empty lesion.
    pub fn new(
        id: impl Into<String>,
        image: GrayImage,
        mask: SegMask,
        lesion_class: LesionClass,
        provenance: Provenance,
    ) -> Result<Self> {
        let id = id.into();
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::Shape(format!(
                "sample `{id}`: image {}x{} vs mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        if !mask.is_binarized() {
            return Err(Error::validation("mask", format!("sample `{id}` mask is not binary")));
        }
        if mask.area() == 0 {
            return Err(Error::validation("mask", format!("sample `{id}` has no lesion pixels")));
        }
        Ok(Self {
            id,
            image,
            mask,
            lesion_class,
            provenance,
        })
    }
}

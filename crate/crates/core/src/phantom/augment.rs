use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GrayImage, PairedSample, SegMask};
use crate::error::{Error, Result};

/// Ranges of the random geometric augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    /// Shear angle range in radians, sampled from `[-range, range]`.
    pub shear_range: f64,
    pub rotation_range_deg: f64,
    /// Horizontal shift as a fraction of the width.
    pub width_shift: f64,
    /// Vertical shift as a fraction of the height.
    pub height_shift: f64,
    /// Per-axis zoom factors are drawn from `[1 - zoom, 1 + zoom]`.
    pub zoom_range: f64,
    pub horizontal_flip: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            shear_range: 0.2,
            rotation_range_deg: 10.0,
            width_shift: 0.1,
            height_shift: 0.1,
            zoom_range: 0.1,
            horizontal_flip: true,
        }
    }
}

impl AugConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            shear_range: 0.0,
            rotation_range_deg: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            zoom_range: 0.0,
            horizontal_flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shear_range", self.shear_range),
            ("rotation_range_deg", self.rotation_range_deg),
            ("width_shift", self.width_shift),
            ("height_shift", self.height_shift),
            ("zoom_range", self.zoom_range),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.zoom_range >= 1.0 {
            return Err(Error::validation("zoom_range", "must be < 1"));
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct AugParams {
    /// Counter-clockwise rotation of the content as displayed (rows grow downwards).
    pub rotation_deg: f64,
    pub shear: f64,
    /// Content translation in pixels along columns.
    pub shift_x: f64,
    /// Content translation in pixels along rows.
    pub shift_y: f64,
    /// Content magnification along columns.
    pub zoom_x: f64,
    pub zoom_y: f64,
    pub flip: bool,
}

impl AugParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            shear: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom_x: 1.0,
            zoom_y: 1.0,
            flip: false,
        }
    }

    pub fn sample(cfg: &AugConfig, width: usize, height: usize, rng: &mut impl Rng) -> Self {
        let mut sym = |r: f64| (2.0 * rng.random::<f64>() - 1.0) * r;
        let rotation_deg = sym(cfg.rotation_range_deg);
        let shift_x = sym(cfg.width_shift) * width as f64;
        let shift_y = sym(cfg.height_shift) * height as f64;
        let shear = sym(cfg.shear_range);
        let zoom_x = 1.0 + sym(cfg.zoom_range);
        let zoom_y = 1.0 + sym(cfg.zoom_range);
        let flip = rng.random::<f64>() < 0.5 && cfg.horizontal_flip;
        Self {
            rotation_deg,
            shear,
            shift_x,
            shift_y,
            zoom_x,
            zoom_y,
            flip,
        }
    }

    /// Maps an output pixel `(x, y)` back to its source location.
    fn source(&self, x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
        let x = if self.flip { (width - 1) as f64 - x } else { x };
        let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
        let (dx, dy) = (x - cx - self.shift_x, y - cy - self.shift_y);
        // forward content map is A = R * Shear * Zoom; apply its inverse
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (rx, ry) = (c * dx - s * dy, s * dx + c * dy);
        let sx = rx - self.shear.tan() * ry;
        let sy = ry;
        (cx + sx / self.zoom_x, cy + sy / self.zoom_y)
    }
}

/// Applies a seeded random geometric transform to image and mask alike.
pub fn augment(sample: &PairedSample, cfg: &AugConfig, seed: u64) -> Result<PairedSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugParams::sample(cfg, sample.image.width(), sample.image.height(), &mut rng);
    augment_with(sample, &params)
}

/// Applies a fixed transform: bilinear for the image, nearest neighbour for
/// the mask (kept binary). Sampling outside the frame repeats the edge.
pub fn augment_with(sample: &PairedSample, p: &AugParams) -> Result<PairedSample> {
    let (w, h) = (sample.image.width(), sample.image.height());
    let img = sample.image.data();
    let mut image = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    for r in 0..h {
        for c in 0..w {
            let (sx, sy) = p.source(c as f64, r as f64, w, h);
            let (x, y) = (clamp(sx, w), clamp(sy, h));
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
            let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
            let bot = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
            image.push(top * (1.0 - fy) + bot * fy);
            let m = sample.mask.get(y.round() as usize, x.round() as usize);
            mask.push(if m >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    Ok(PairedSample {
        id: sample.id.clone(),
        image: GrayImage::from_clamped(w, h, sample.image.spacing(), image)?,
        mask: SegMask::binary(w, h, mask)?,
        lesion_class: sample.lesion_class,
        provenance: sample.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, LesionClass, PhantomSpec, Provenance};

    fn sample() -> PairedSample {
        generate_phantom(&PhantomSpec::default(), 3).unwrap()
    }

    #[test]
    fn zero_ranges_are_identity() {
        let s = sample();
        let out = augment(&s, &AugConfig::identity(), 99).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample();
        let p = AugParams {
            flip: true,
            ..AugParams::identity()
        };
        let once = augment_with(&s, &p).unwrap();
        assert_ne!(once.image, s.image);
        assert_eq!(augment_with(&once, &p).unwrap(), s);
    }

    #[test]
    fn seeded_draws_repeat() {
        let s = sample();
        let cfg = AugConfig::default();
        assert_eq!(augment(&s, &cfg, 5).unwrap(), augment(&s, &cfg, 5).unwrap());
    }

    #[test]
    fn rotated_hot_pixel_lands_on_rotated_coordinate() {
        let (w, h) = (48usize, 40usize);
        let mut img = vec![-1.0f32; w * h];
        img[10 * w + 20] = 1.0;
        let mut m = vec![0.0f32; w * h];
        m[10 * w + 20] = 1.0;
        let s = PairedSample::new(
            "hot",
            GrayImage::new(w, h, 0.1, img).unwrap(),
            SegMask::binary(w, h, m).unwrap(),
            LesionClass::Benign,
            Provenance::Synthetic,
        )
        .unwrap();
        let p = AugParams {
            rotation_deg: 10.0,
            ..AugParams::identity()
        };
        let out = augment_with(&s, &p).unwrap();
        let (mut mass, mut mr, mut mc) = (0.0, 0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let v = (out.image.get(r, c) + 1.0) as f64;
                mass += v;
                mr += v * r as f64;
                mc += v * c as f64;
            }
        }
        let (cr, cc) = (mr / mass, mc / mass);
        // oracle: counter-clockwise on screen, rows pointing down
        let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
        let (dx, dy) = (20.0 - cx, 10.0 - cy);
        let t = 10f64.to_radians();
        let ex = cx + t.cos() * dx + t.sin() * dy;
        let ey = cy - t.sin() * dx + t.cos() * dy;
        assert!(((cr - ey).powi(2) + (cc - ex).powi(2)).sqrt() < 1.0, "({cr},{cc}) vs ({ey},{ex})");
    }
}

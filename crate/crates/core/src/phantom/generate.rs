use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GrayImage, LesionClass, PairedSample, Provenance, SegMask};
use crate::error::{Error, Result};
use crate::filter;

/// Parameters of the synthetic B-mode phantom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// `[rows, cols]` of the generated image.
    pub canvas: [usize; 2],
    /// Pixel spacing in mm.
    pub spacing: f64,
    /// Mean lesion radius range in pixels, `[min, max]`.
    pub lesion_radius_range: [f64; 2],
    /// Standard deviation (pixels) of the lesion boundary blur.
    pub boundary_blur_sigma: f64,
    pub shadow_probability: f64,
    /// Fraction of echo removed at full posterior shadow depth.
    pub shadow_attenuation: f64,
    /// Correlation length (pixels) of the speckle pattern.
    pub speckle_grain: f64,
    /// Fractional echo reduction inside the lesion.
    pub lesion_contrast: f64,
    /// Multiplicative echo loss per image row.
    pub depth_attenuation: f64,
    pub malignant_fraction: f64,
    /// Probability that part of the lesion boundary fades into the background.
    pub ill_defined_edge_probability: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            canvas: [96, 96],
            spacing: 0.1,
            lesion_radius_range: [9.0, 15.0],
            boundary_blur_sigma: 1.5,
            shadow_probability: 0.5,
            shadow_attenuation: 0.55,
            speckle_grain: 1.0,
            lesion_contrast: 0.65,
            depth_attenuation: 0.996,
            malignant_fraction: 0.25,
            ill_defined_edge_probability: 0.4,
        }
    }
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(field, format!("{v} outside [0, 1]")))
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let [rows, cols] = self.canvas;
        if rows < 8 || cols < 8 {
            return Err(Error::validation("canvas", "both sides must be >= 8 pixels"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::validation("spacing", "must be > 0"));
        }
        let [rmin, rmax] = self.lesion_radius_range;
        if !(rmin > 0.0 && rmin <= rmax && rmax.is_finite()) {
            return Err(Error::validation(
                "lesion_radius_range",
                format!("need 0 < min <= max, got [{rmin}, {rmax}]"),
            ));
        }
        if rmax >= rows.min(cols) as f64 / 2.0 {
            return Err(Error::validation(
                "lesion_radius_range",
                format!("max radius {rmax} must be < half the smaller canvas side"),
            ));
        }
        if !(self.boundary_blur_sigma >= 0.0 && self.boundary_blur_sigma.is_finite()) {
            return Err(Error::validation("boundary_blur_sigma", "must be >= 0"));
        }
        unit("shadow_probability", self.shadow_probability)?;
        unit("shadow_attenuation", self.shadow_attenuation)?;
        unit("lesion_contrast", self.lesion_contrast)?;
        unit("malignant_fraction", self.malignant_fraction)?;
        unit("ill_defined_edge_probability", self.ill_defined_edge_probability)?;
        if !(self.speckle_grain > 0.0 && self.speckle_grain.is_finite()) {
            return Err(Error::validation("speckle_grain", "must be > 0"));
        }
        if !(self.depth_attenuation > 0.0 && self.depth_attenuation <= 1.0) {
            return Err(Error::validation("depth_attenuation", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Lesion outline: an area-preserving ellipse with a few radial harmonics.
struct Outline {
    center: (f64, f64),
    semi_axes: (f64, f64),
    orientation: f64,
    harmonics: Vec<(f64, f64, f64)>,
}

impl Outline {
    fn contains(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center.0, col - self.center.1);
        let (s, c) = self.orientation.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        let rho = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        let boundary = 1.0
            + self
                .harmonics
                .iter()
                .map(|&(k, a, phase)| a * (k * theta + phase).cos())
                .sum::<f64>();
        rho <= boundary
    }

    fn extent(&self) -> f64 {
        let a: f64 = self.harmonics.iter().map(|h| h.1).sum();
        self.semi_axes.0.max(self.semi_axes.1) * (1.0 + a)
    }
}

fn noise_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Low-pass Gaussian field with unit pointwise variance away from the borders.
fn correlated_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let raw = noise_field(rng, rows * cols);
    let k = filter::gaussian_kernel(sigma);
    let std: f64 = k.iter().map(|v| v * v).sum::<f64>();
    filter::gaussian_blur(&raw, cols, rows, sigma)
        .into_iter()
        .map(|v| v / std)
        .collect()
}

/// Generates one phantom; a pure function of `(spec, seed)`.
///
/// The mask is the exact lesion support. The image shows a hypoechoic lesion
/// with blurred (optionally partly vanishing) boundary, an optional posterior
/// shadow, depth attenuation and multiplicative Rayleigh speckle.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<PairedSample> {
    spec.validate()?;
    let [rows, cols] = spec.canvas;
    let n = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let malignant = rng.random::<f64>() < spec.malignant_fraction;
    let lesion_class = if malignant {
        LesionClass::Malignant
    } else {
        LesionClass::Benign
    };
    let [rmin, rmax] = spec.lesion_radius_range;
    let radius = rmin + rng.random::<f64>() * (rmax - rmin);

    // benign: wider-than-tall smooth ovals; malignant: rounder, lobulated, any orientation
    let (aspect, orientation, lobulation) = if malignant {
        (
            1.0 + 0.2 * rng.random::<f64>(),
            PI * rng.random::<f64>(),
            0.07,
        )
    } else {
        (
            1.0 + 0.5 * rng.random::<f64>(),
            0.6 * (rng.random::<f64>() - 0.5),
            0.025,
        )
    };
    let harmonics: Vec<(f64, f64, f64)> = (2..=7)
        .map(|k| {
            let amp = lobulation * rng.random::<f64>() / (k as f64).sqrt();
            (k as f64, amp, 2.0 * PI * rng.random::<f64>())
        })
        .collect();
    let mut outline = Outline {
        center: (0.0, 0.0),
        semi_axes: (radius * aspect.sqrt(), radius / aspect.sqrt()),
        orientation,
        harmonics,
    };
    let extent = outline.extent();
    let place = |len: usize, u: f64| {
        let lo = extent + 1.0;
        let hi = len as f64 - 2.0 - extent;
        if hi > lo {
            lo + u * (hi - lo)
        } else {
            (len as f64 - 1.0) / 2.0
        }
    };
    // keep lesions in the upper two thirds of the depth range so shadows are visible
    let u_row = 0.15 + 0.45 * rng.random::<f64>();
    let u_col = rng.random::<f64>();
    outline.center = (place(rows, u_row), place(cols, u_col));

    let mut inside = vec![false; n];
    for r in 0..rows {
        for c in 0..cols {
            inside[r * cols + c] = outline.contains(r as f64, c as f64);
        }
    }
    if !inside.iter().any(|&b| b) {
        let (r, c) = (outline.center.0.round() as usize, outline.center.1.round() as usize);
        inside[r.min(rows - 1) * cols + c.min(cols - 1)] = true;
    }
    let mask_f: Vec<f64> = inside.iter().map(|&b| b as u8 as f64).collect();

    // Tissue background with mild layering.
    let texture = correlated_field(&mut rng, rows, cols, cols as f64 / 10.0);
    let layer_phase = 2.0 * PI * rng.random::<f64>();
    let layer_period = rows as f64 / 2.5;
    let mut echo: Vec<f64> = (0..n)
        .map(|i| {
            let r = (i / cols) as f64;
            0.55 + 0.07 * texture[i] + 0.05 * (2.0 * PI * r / layer_period + layer_phase).sin()
        })
        .collect();

    // Lesion with blurred boundary; optionally a sector where the edge dissolves.
    let mut weight = filter::gaussian_blur(&mask_f, cols, rows, spec.boundary_blur_sigma);
    let ill_defined = rng.random::<f64>() < spec.ill_defined_edge_probability;
    let fade_direction = 2.0 * PI * rng.random::<f64>();
    if ill_defined {
        let wide = filter::gaussian_blur(&mask_f, cols, rows, 3.0 * spec.boundary_blur_sigma + 2.0);
        for i in 0..n {
            let dy = (i / cols) as f64 - outline.center.0;
            let dx = (i % cols) as f64 - outline.center.1;
            let s = (2.0 * ((dy.atan2(dx) - fade_direction).cos() - 1.0)).exp();
            weight[i] = (1.0 - s) * weight[i] + s * wide[i];
        }
    }
    for i in 0..n {
        echo[i] *= 1.0 - spec.lesion_contrast * weight[i];
    }

    // Posterior acoustic shadow: columns below the lesion, linear onset in depth.
    let shadowed = rng.random::<f64>() < spec.shadow_probability;
    if shadowed {
        let bottoms: Vec<Option<usize>> = (0..cols)
            .map(|c| (0..rows).rev().find(|&r| inside[r * cols + c]))
            .collect();
        let onset = (0.5 * radius).max(2.0);
        let taper = 3usize;
        for c in 0..cols {
            // nearest lesion column within the lateral taper
            let nearest = (0..=taper).find_map(|d| {
                [c.checked_sub(d), Some(c + d)]
                    .into_iter()
                    .flatten()
                    .filter(|&cc| cc < cols)
                    .find_map(|cc| bottoms[cc].map(|b| (d, b)))
            });
            let Some((d, bottom)) = nearest else { continue };
            let lateral = 1.0 - d as f64 / (taper as f64 + 1.0);
            for r in bottom + 1..rows {
                let ramp = ((r - bottom) as f64 / onset).min(1.0);
                echo[r * cols + c] *= 1.0 - spec.shadow_attenuation * lateral * ramp;
            }
        }
    }

    for r in 0..rows {
        let gain = spec.depth_attenuation.powi(r as i32);
        for v in &mut echo[r * cols..(r + 1) * cols] {
            *v *= gain;
        }
    }

    // Rayleigh-distributed envelope from two correlated Gaussian quadratures.
    let i_field = correlated_field(&mut rng, rows, cols, spec.speckle_grain);
    let q_field = correlated_field(&mut rng, rows, cols, spec.speckle_grain);
    let rayleigh_mean = PI.sqrt() / 2.0;
    let data: Vec<f32> = (0..n)
        .map(|i| {
            let envelope = ((i_field[i].powi(2) + q_field[i].powi(2)) / 2.0).sqrt() / rayleigh_mean;
            let v = (0.85 * echo[i] * envelope).clamp(0.0, 1.0);
            (2.0 * v - 1.0) as f32
        })
        .collect();

    let image = GrayImage::new(cols, rows, spec.spacing, data)?;
    let mask = SegMask::from_bools(cols, rows, &inside)?;
    PairedSample::new(
        format!("phantom-{seed:010}"),
        image,
        mask,
        lesion_class,
        Provenance::Synthetic,
    )
}

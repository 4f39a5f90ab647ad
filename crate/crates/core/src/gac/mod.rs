//! Geodesic active contour level-set segmentation.

mod fit;
mod reinit;

pub use fit::{evaluate_grid_point, fit_params, FitGrid, FitResult};
pub use reinit::reinitialize;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_gradient;
use crate::phantom::{GrayImage, SegMask};

/// Steps between signed-distance reinitializations.
pub const REINIT_EVERY: usize = 20;
const GRAD_GUARD: f64 = 1e-8;
/// Curvature bound used in the stability limit: `2 / h` with `h = 1`.
const K_MAX: f64 = 2.0;

/// Level-set function on the pixel grid, negative inside the contour.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl LevelSetField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Shape(format!("level set {width}x{height} with {} values", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                term: "phi".into(),
                iteration: 0,
                value: *v,
            });
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    pub fn has_interior(&self) -> bool {
        self.values.iter().any(|&v| v < 0.0)
    }
}

/// Edge-stopping function `g`, in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SpeedMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Shape(format!("speed map {width}x{height} with {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation("speed", "values must be finite and non-negative"));
        }
        Ok(Self { width, height, values })
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Central-difference gradient with one-sided differences on the border.
    fn gradient(&self) -> (Vec<f64>, Vec<f64>) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
                let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
                if c1 > c0 {
                    gx[r * w + c] = (self.get(r, c1) - self.get(r, c0)) / (c1 - c0) as f64;
                }
                if r1 > r0 {
                    gy[r * w + c] = (self.get(r1, c) - self.get(r0, c)) / (r1 - r0) as f64;
                }
            }
        }
        (gx, gy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetParams {
    /// Curvature weight.
    pub epsilon: f64,
    /// Advection weight.
    pub alpha: f64,
    /// Gaussian standard deviation of the edge detector, pixels.
    pub sigma: f64,
    pub dt: f64,
    pub steps: usize,
    /// Radius of the initial circle, pixels.
    pub init_radius: f64,
}

impl Default for LevelSetParams {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            alpha: 0.0,
            sigma: 2.0,
            dt: 0.5,
            steps: 50,
            init_radius: 3.0,
        }
    }
}

impl LevelSetParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("epsilon", self.epsilon.is_finite() && self.epsilon >= 0.0),
            ("alpha", self.alpha.is_finite() && self.alpha >= 0.0),
            ("sigma", self.sigma.is_finite() && self.sigma > 0.0),
            ("dt", self.dt.is_finite() && self.dt > 0.0),
            ("steps", self.steps > 0),
            ("init_radius", self.init_radius.is_finite() && self.init_radius > 0.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(Error::validation(*field, "out of range")),
            None => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }
}

/// `g = 1 / (1 + |∇G_σ * f|)` on the image rescaled to `[0, 1]`.
pub fn speed_map(img: &GrayImage, sigma: f64) -> Result<SpeedMap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::validation("sigma", "must be positive"));
    }
    let (w, h) = (img.width(), img.height());
    let lo = img.data().iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = img.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let span = hi - lo;
    let f: Vec<f64> = if span > 0.0 {
        img.data().iter().map(|&v| (v as f64 - lo) / span).collect()
    } else {
        vec![0.0; w * h]
    };
    let (gx, gy) = gaussian_gradient(&f, w, h, sigma);
    let g = gx.iter().zip(&gy).map(|(a, b)| 1.0 / (1.0 + a.hypot(*b))).collect();
    SpeedMap::new(w, h, g)
}

/// Signed distance to a circle; `center` is `(row, col)`.
pub fn init_phi(width: usize, height: usize, center: (f64, f64), radius: f64) -> Result<LevelSetField> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::validation("radius", "must be positive"));
    }
    let (cr, cc) = center;
    if !(cr >= 0.0 && cc >= 0.0 && cr <= (height as f64 - 1.0) && cc <= (width as f64 - 1.0)) {
        return Err(Error::Domain(format!("center ({cr}, {cc}) outside {width}x{height}")));
    }
    let values = (0..width * height)
        .map(|i| ((i / width) as f64 - cr).hypot((i % width) as f64 - cc) - radius)
        .collect();
    LevelSetField::new(width, height, values)
}

pub fn phi_to_mask(phi: &LevelSetField) -> SegMask {
    let bits: Vec<bool> = phi.values.iter().map(|&v| v < 0.0).collect();
    SegMask::from_bools(phi.width, phi.height, &bits).expect("field shape is valid")
}

/// Largest stable time step for the given speed map and weights.
pub fn cfl_bound(g: &SpeedMap, epsilon: f64, alpha: f64) -> f64 {
    let (gx, gy) = g.gradient();
    let max_grad = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let denom = g.max() * (1.0 + epsilon * K_MAX) + alpha * max_grad;
    if denom > 0.0 {
        0.5 / denom
    } else {
        f64::INFINITY
    }
}

/// Precomputed per-image terms of the evolution.
struct Stepper<'g> {
    g: &'g SpeedMap,
    /// Advection velocity `-α ∇g`, pointing towards edges.
    vx: Vec<f64>,
    vy: Vec<f64>,
    epsilon: f64,
}

impl<'g> Stepper<'g> {
    fn new(g: &'g SpeedMap, epsilon: f64, alpha: f64) -> Self {
        let (gx, gy) = g.gradient();
        Self {
            g,
            vx: gx.iter().map(|v| -alpha * v).collect(),
            vy: gy.iter().map(|v| -alpha * v).collect(),
            epsilon,
        }
    }

    /// One explicit step of size `dt`; borders replicate the edge value.
    fn step(&self, phi: &[f64], dt: f64, out: &mut [f64]) {
        let (w, h) = (self.g.width, self.g.height);
        let at = |r: usize, c: usize| phi[r * w + c];
        for r in 0..h {
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            for c in 0..w {
                let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
                let p = at(r, c);
                let dxm = p - at(r, cl);
                let dxp = at(r, cr) - p;
                let dym = p - at(ru, c);
                let dyp = at(rd, c) - p;

                // propagation, outward for g > 0
                let grad_plus = (dxm.max(0.0).powi(2)
                    + dxp.min(0.0).powi(2)
                    + dym.max(0.0).powi(2)
                    + dyp.min(0.0).powi(2))
                .sqrt();
                let gi = self.g.values[r * w + c];
                let mut rate = -gi * grad_plus;

                // curvature smoothing
                if self.epsilon > 0.0 {
                    let px = 0.5 * (dxm + dxp);
                    let py = 0.5 * (dym + dyp);
                    let n2 = px * px + py * py;
                    if n2.sqrt() >= GRAD_GUARD {
                        let pxx = dxp - dxm;
                        let pyy = dyp - dym;
                        let pxy = 0.25
                            * (at(rd, cr) - at(rd, cl) - at(ru, cr) + at(ru, cl));
                        let curv_grad = (pxx * py * py - 2.0 * px * py * pxy + pyy * px * px) / n2;
                        rate += self.epsilon * gi * curv_grad;
                    }
                }

                // advection along -α∇g
                let (vx, vy) = (self.vx[r * w + c], self.vy[r * w + c]);
                let ax = if vx > 0.0 { vx * dxm } else { vx * dxp };
                let ay = if vy > 0.0 { vy * dym } else { vy * dyp };
                rate -= ax + ay;

                out[r * w + c] = p + dt * rate;
            }
        }
    }
}

fn check_shapes(phi: &LevelSetField, g: &SpeedMap) -> Result<()> {
    if (phi.width, phi.height) != (g.width, g.height) {
        return Err(Error::Shape(format!(
            "level set {}x{} vs speed map {}x{}",
            phi.width, phi.height, g.width, g.height
        )));
    }
    Ok(())
}

fn check_cfl(g: &SpeedMap, params: &LevelSetParams, dt: f64) -> Result<()> {
    let bound = cfl_bound(g, params.epsilon, params.alpha);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::validation("dt", format!("{dt} exceeds stability bound {bound:.6}")));
    }
    Ok(())
}

/// Evolves `phi` for `steps` steps of `dt`, calling `observe(step, phi)` after
/// each one. Reinitializes to signed distance every [`REINIT_EVERY`] steps.
fn run(
    phi: &LevelSetField,
    g: &SpeedMap,
    params: &LevelSetParams,
    substeps: usize,
    mut observe: impl FnMut(usize, &LevelSetField),
) -> Result<LevelSetField> {
    let stepper = Stepper::new(g, params.epsilon, params.alpha);
    let dt = params.dt / substeps as f64;
    let mut cur = phi.clone();
    let mut next = vec![0.0; cur.values.len()];
    for step in 1..=params.steps {
        for _ in 0..substeps {
            stepper.step(&cur.values, dt, &mut next);
            std::mem::swap(&mut cur.values, &mut next);
        }
        if let Some(v) = cur.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                term: "phi".into(),
                iteration: step,
                value: *v,
            });
        }
        if step % REINIT_EVERY == 0 {
            cur = reinitialize(&cur);
        }
        observe(step, &cur);
    }
    Ok(cur)
}

/// Explicit evolution of `Φ_t + g(1 + εk)|∇Φ| - α∇g·∇Φ = 0` with
/// `k = -div(∇Φ/|∇Φ|)`. Fails when `dt` exceeds the stability bound.
pub fn evolve(phi: &LevelSetField, g: &SpeedMap, params: &LevelSetParams) -> Result<LevelSetField> {
    params.validate()?;
    check_shapes(phi, g)?;
    check_cfl(g, params, params.dt)?;
    run(phi, g, params, 1, |_, _| {})
}

/// Number of equal substeps that keeps `params.dt` within the stability bound.
pub fn substeps_for(g: &SpeedMap, params: &LevelSetParams) -> usize {
    let bound = cfl_bound(g, params.epsilon, params.alpha);
    ((params.dt / bound) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Like [`evolve`] but splits each step into stable substeps and reports the
/// field after every step.
pub fn evolve_observed(
    phi: &LevelSetField,
    g: &SpeedMap,
    params: &LevelSetParams,
    observe: impl FnMut(usize, &LevelSetField),
) -> Result<LevelSetField> {
    params.validate()?;
    check_shapes(phi, g)?;
    run(phi, g, params, substeps_for(g, params), observe)
}

/// Segments `img` starting from a circle around `center` (`(row, col)`),
/// or the image center when `None`.
pub fn segment(img: &GrayImage, params: &LevelSetParams, center: Option<(f64, f64)>) -> Result<SegMask> {
    params.validate()?;
    let g = speed_map(img, params.sigma)?;
    let center = center.unwrap_or(((img.height() - 1) as f64 / 2.0, (img.width() - 1) as f64 / 2.0));
    let phi = init_phi(img.width(), img.height(), center, params.init_radius)?;
    Ok(phi_to_mask(&evolve_observed(&phi, &g, params, |_, _| {})?))
}

/// Seed point for a sample: the centroid of its reference mask, else the
/// image center.
pub fn seed_point(mask: &SegMask) -> (f64, f64) {
    mask.centroid()
        .unwrap_or(((mask.height() - 1) as f64 / 2.0, (mask.width() - 1) as f64 / 2.0))
}

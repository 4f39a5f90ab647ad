use super::{GrayImage, SegMask};
use crate::error::{Error, Result};

/// Largest side a resampled image may have.
pub const MAX_DIMENSION: usize = 8192;

fn target_dims(width: usize, height: usize, from: f64, to: f64, cap: usize) -> Result<(usize, usize)> {
    if !(to > 0.0 && to.is_finite()) {
        return Err(Error::validation("target_spacing", format!("must be > 0, got {to}")));
    }
    let scale = from / to;
    let w = (width as f64 * scale).round();
    let h = (height as f64 * scale).round();
    if w > cap as f64 || h > cap as f64 {
        return Err(Error::Resource(format!(
            "resampling {width}x{height} from {from} mm to {to} mm gives {w}x{h}, cap is {cap}"
        )));
    }
    Ok(((w as usize).max(1), (h as usize).max(1)))
}

/// Source coordinate of output pixel `o` when `n_in` pixels map onto `n_out`
/// (pixel centers aligned).
#[inline]
fn source_coord(o: usize, n_in: usize, n_out: usize) -> f64 {
    let s = n_in as f64 / n_out as f64;
    ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n_in - 1) as f64)
}

/// Bilinear resampling to a new isotropic pixel spacing.
pub fn resample(img: &GrayImage, target_spacing: f64) -> Result<GrayImage> {
    resample_with_cap(img, target_spacing, MAX_DIMENSION)
}

pub fn resample_with_cap(img: &GrayImage, target_spacing: f64, cap: usize) -> Result<GrayImage> {
    let (w_in, h_in) = (img.width(), img.height());
    let (w, h) = target_dims(w_in, h_in, img.spacing(), target_spacing, cap)?;
    if (w, h) == (w_in, h_in) {
        return GrayImage::new(w, h, target_spacing, img.data().to_vec());
    }
    let src = img.data();
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let y = source_coord(r, h_in, h);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h_in - 1);
        let fy = (y - y0 as f64) as f32;
        for c in 0..w {
            let x = source_coord(c, w_in, w);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w_in - 1);
            let fx = (x - x0 as f64) as f32;
            let top = src[y0 * w_in + x0] * (1.0 - fx) + src[y0 * w_in + x1] * fx;
            let bot = src[y1 * w_in + x0] * (1.0 - fx) + src[y1 * w_in + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    GrayImage::from_clamped(w, h, target_spacing, out)
}

/// Nearest-neighbour resampling of a mask from `from` to `to` spacing.
pub fn resample_mask(mask: &SegMask, from: f64, to: f64) -> Result<SegMask> {
    let (w_in, h_in) = (mask.width(), mask.height());
    let (w, h) = target_dims(w_in, h_in, from, to, MAX_DIMENSION)?;
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let y = source_coord(r, h_in, h).round() as usize;
        for c in 0..w {
            let x = source_coord(c, w_in, w).round() as usize;
            out.push(mask.get(y, x));
        }
    }
    SegMask::soft(w, h, out).map(|m| m.binarize(0.5))
}

fn crop_window(
    width: usize,
    height: usize,
    center: (usize, usize),
    size: usize,
) -> Result<(isize, isize)> {
    if size == 0 {
        return Err(Error::validation("size", "must be >= 1"));
    }
    let (row, col) = center;
    if row >= height || col >= width {
        return Err(Error::Domain(format!(
            "center ({row}, {col}) outside {width}x{height} image"
        )));
    }
    let half = (size / 2) as isize;
    Ok((row as isize - half, col as isize - half))
}

fn crop_grid(
    data: &[f32],
    width: usize,
    height: usize,
    origin: (isize, isize),
    size: usize,
    fill: f32,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size as isize {
        let y = origin.0 + r;
        for c in 0..size as isize {
            let x = origin.1 + c;
            let v = if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                data[y as usize * width + x as usize]
            } else {
                fill
            };
            out.push(v);
        }
    }
    out
}

/// Square window of side `size` whose center pixel is `center = (row, col)`;
/// pixels outside the image take the image minimum.
pub fn crop_roi(img: &GrayImage, center: (usize, usize), size: usize) -> Result<GrayImage> {
    let origin = crop_window(img.width(), img.height(), center, size)?;
    let data = crop_grid(
        img.data(),
        img.width(),
        img.height(),
        origin,
        size,
        img.min_value(),
    );
    GrayImage::new(size, size, img.spacing(), data)
}

/// Same window as [`crop_roi`] applied to a mask; outside pixels are background.
pub fn crop_roi_mask(mask: &SegMask, center: (usize, usize), size: usize) -> Result<SegMask> {
    let origin = crop_window(mask.width(), mask.height(), center, size)?;
    let data = crop_grid(mask.data(), mask.width(), mask.height(), origin, size, 0.0);
    if mask.is_binarized() {
        SegMask::binary(size, size, data)
    } else {
        SegMask::soft(size, size, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        let data = (0..w * h).map(|i| i as f32 / (w * h) as f32 * 2.0 - 1.0).collect();
        GrayImage::new(w, h, 0.2, data).unwrap()
    }

    #[test]
    fn doubling_resolution_doubles_dims() {
        let out = resample(&ramp(100, 100), 0.1).unwrap();
        assert_eq!((out.width(), out.height()), (200, 200));
        assert_eq!(out.spacing(), 0.1);
    }

    #[test]
    fn identity_and_constant() {
        let img = ramp(17, 9);
        assert_eq!(resample(&img, 0.2).unwrap(), img);
        let c = GrayImage::filled(13, 7, 0.3, 0.37).unwrap();
        let out = resample(&c, 0.17).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn cap_is_enforced() {
        let err = resample_with_cap(&ramp(10, 10), 0.001, 1000).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
        assert!(matches!(resample(&ramp(4, 4), 0.0), Err(Error::Validation { .. })));
    }

    #[test]
    fn interior_crop_is_subarray() {
        let img = ramp(600, 600);
        let roi = crop_roi(&img, (300, 310), 400).unwrap();
        assert_eq!((roi.width(), roi.height()), (400, 400));
        for r in 0..400 {
            for c in 0..400 {
                assert_eq!(roi.get(r, c), img.get(100 + r, 110 + c));
            }
        }
    }

    #[test]
    fn corner_crop_pads_with_minimum() {
        // 8x8 grid with value 10*row + col scaled into [-1, 1]
        let data: Vec<f32> = (0..64).map(|i| ((i / 8) * 10 + i % 8) as f32 / 100.0).collect();
        let img = GrayImage::new(8, 8, 0.1, data).unwrap();
        let roi = crop_roi(&img, (0, 0), 4).unwrap();
        let min = img.min_value();
        // window rows/cols -2..2: only the lower-right 2x2 quadrant comes from the image
        let expected = [
            [min, min, min, min],
            [min, min, min, min],
            [min, min, 0.00, 0.01],
            [min, min, 0.10, 0.11],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(roi.get(r, c), expected[r][c], "({r},{c})");
            }
        }
        assert!(matches!(crop_roi(&img, (8, 0), 4), Err(Error::Domain(_))));
    }
}

//! Separable Gaussian filtering on row-major `f64` grids with mirrored borders.

/// Sampled, unit-sum Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Half of the antisymmetric derivative-of-Gaussian kernel: entry `i - 1`
/// weights `f(x + i) - f(x - i)`. Normalized to return exactly the slope of a
/// linear ramp.
pub fn gaussian_derivative_half(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (1..=r)
        .map(|i| {
            let x = i as f64;
            x * (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let moment: f64 = k.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).sum();
    k.iter_mut().for_each(|v| *v /= moment);
    k
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Convolves every row with `kernel` (centered), mirroring at the borders.
pub fn convolve_rows(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                let xi = x as isize + r - j as isize;
                acc += k * row[mirror(xi, width)];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Convolves every column with `kernel` (centered), mirroring at the borders.
pub fn convolve_cols(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (j, &k) in kernel.iter().enumerate() {
            let yi = mirror(y as isize + r - j as isize, height);
            let src = &data[yi * width..(yi + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

/// Row-wise antisymmetric filtering; pairs of samples are differenced first,
/// so a constant row yields exactly zero.
fn derivative_rows(data: &[f64], width: usize, height: usize, half: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &k) in half.iter().enumerate() {
                let o = i as isize + 1;
                acc += k * (row[mirror(x as isize + o, width)] - row[mirror(x as isize - o, width)]);
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn derivative_cols(data: &[f64], width: usize, height: usize, half: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (i, &k) in half.iter().enumerate() {
            let o = i as isize + 1;
            let up = mirror(y as isize + o, height);
            let dn = mirror(y as isize - o, height);
            for x in 0..width {
                out[y * width + x] += k * (data[up * width + x] - data[dn * width + x]);
            }
        }
    }
    out
}

pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    convolve_cols(&convolve_rows(data, width, height, &k), width, height, &k)
}

/// Derivative-of-Gaussian gradient `(d/dx, d/dy)` at standard deviation `sigma`.
pub fn gaussian_gradient(
    data: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
) -> (Vec<f64>, Vec<f64>) {
    let g = gaussian_kernel(sigma);
    let d = gaussian_derivative_half(sigma);
    let gx = convolve_cols(&derivative_rows(data, width, height, &d), width, height, &g);
    let gy = convolve_rows(&derivative_cols(data, width, height, &d), width, height, &g);
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_normalized() {
        let k = gaussian_kernel(1.7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = gaussian_derivative_half(2.0);
        let slope: f64 = d.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).sum();
        assert!((slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_ramp_is_slope() {
        let (w, h) = (40, 30);
        let data: Vec<f64> = (0..w * h).map(|i| 0.25 * (i % w) as f64).collect();
        let (gx, gy) = gaussian_gradient(&data, w, h, 2.0);
        // interior only: mirrored borders fold the ramp
        for y in 0..h {
            for x in 10..30 {
                assert!((gx[y * w + x] - 0.25).abs() < 1e-9);
                assert!(gy[y * w + x].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_has_exactly_zero_gradient() {
        let data = vec![0.3; 12 * 9];
        let (gx, gy) = gaussian_gradient(&data, 12, 9, 1.5);
        assert!(gx.iter().chain(&gy).all(|&v| v == 0.0));
    }
}

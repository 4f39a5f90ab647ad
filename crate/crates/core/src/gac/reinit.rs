use super::LevelSetField;

/// Replaces `phi` by the signed distance to its zero level, keeping signs.
/// Pixels next to a sign change get sub-pixel distances by linear
/// interpolation; the rest are filled by fast sweeping of `|∇d| = 1`.
/// A field without a sign change is returned unchanged.
pub fn reinitialize(phi: &LevelSetField) -> LevelSetField {
    let (w, h) = (phi.width, phi.height);
    let v = &phi.values;
    let mut d = vec![f64::INFINITY; w * h];
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            let p = v[r * w + c];
            // per-axis distance to the nearest crossing
            let mut axis = [f64::INFINITY; 2];
            let neighbours = [
                (0, r.checked_sub(1).map(|rr| (rr, c))),
                (0, (r + 1 < h).then_some((r + 1, c))),
                (1, c.checked_sub(1).map(|cc| (r, cc))),
                (1, (c + 1 < w).then_some((r, c + 1))),
            ];
            for (a, n) in neighbours {
                let Some((rr, cc)) = n else { continue };
                let q = v[rr * w + cc];
                if p == 0.0 {
                    axis[a] = 0.0;
                } else if (p < 0.0) != (q < 0.0) {
                    axis[a] = axis[a].min(p / (p - q));
                }
            }
            let dist = match (axis[0].is_finite(), axis[1].is_finite()) {
                (false, false) => continue,
                (true, false) => axis[0],
                (false, true) => axis[1],
                (true, true) => {
                    if axis[0] == 0.0 || axis[1] == 0.0 {
                        0.0
                    } else {
                        1.0 / (axis[0].powi(-2) + axis[1].powi(-2)).sqrt()
                    }
                }
            };
            d[r * w + c] = dist;
            any = true;
        }
    }
    if !any {
        return phi.clone();
    }
    let fixed: Vec<bool> = d.iter().map(|x| x.is_finite()).collect();
    let update = |d: &mut [f64], r: usize, c: usize| {
        let i = r * w + c;
        if fixed[i] {
            return;
        }
        let a = match (c > 0, c + 1 < w) {
            (true, true) => d[i - 1].min(d[i + 1]),
            (true, false) => d[i - 1],
            (false, true) => d[i + 1],
            (false, false) => f64::INFINITY,
        };
        let b = match (r > 0, r + 1 < h) {
            (true, true) => d[i - w].min(d[i + w]),
            (true, false) => d[i - w],
            (false, true) => d[i + w],
            (false, false) => f64::INFINITY,
        };
        let x = if (a - b).abs() >= 1.0 || !a.is_finite() || !b.is_finite() {
            a.min(b) + 1.0
        } else {
            0.5 * (a + b + (2.0 - (a - b).powi(2)).sqrt())
        };
        if x < d[i] {
            d[i] = x;
        }
    };
    for _ in 0..2 {
        for r in 0..h {
            for c in 0..w {
                update(&mut d, r, c);
            }
        }
        for r in 0..h {
            for c in (0..w).rev() {
                update(&mut d, r, c);
            }
        }
        for r in (0..h).rev() {
            for c in 0..w {
                update(&mut d, r, c);
            }
        }
        for r in (0..h).rev() {
            for c in (0..w).rev() {
                update(&mut d, r, c);
            }
        }
    }
    let values = d
        .iter()
        .zip(v)
        .map(|(&dist, &p)| if p < 0.0 { -dist } else { dist })
        .collect();
    LevelSetField {
        width: w,
        height: h,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gac::{init_phi, phi_to_mask};

    #[test]
    fn restores_distance_and_keeps_mask() {
        let sd = init_phi(48, 40, (20.0, 24.0), 9.0).unwrap();
        let squashed = LevelSetField {
            width: 48,
            height: 40,
            values: sd.values.iter().map(|v| v * (3.0 + v.abs())).collect(),
        };
        let re = reinitialize(&squashed);
        assert_eq!(phi_to_mask(&re), phi_to_mask(&sd));
        let worst = re
            .values
            .iter()
            .zip(&sd.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1.0, "max deviation {worst}");
    }

    #[test]
    fn no_contour_is_untouched() {
        let f = LevelSetField::new(4, 4, vec![2.0; 16]).unwrap();
        assert_eq!(reinitialize(&f), f);
    }
}

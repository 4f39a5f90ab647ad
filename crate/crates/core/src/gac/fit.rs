use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{evolve_observed, init_phi, phi_to_mask, seed_point, speed_map, LevelSetParams, SpeedMap};
use crate::error::{Error, Result};
use crate::evalstat::dice;
use crate::phantom::PairedSample;

/// Discrete search space. Every step count is evaluated from one evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitGrid {
    pub epsilon: Vec<f64>,
    pub alpha: Vec<f64>,
    pub steps: Vec<usize>,
    pub sigma: Vec<f64>,
    pub dt: f64,
    pub init_radius: f64,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self {
            epsilon: vec![0.0, 0.1, 0.3, 1.0, 3.0],
            alpha: vec![0.0, 1.0, 3.0, 10.0, 30.0, 100.0],
            steps: vec![5, 10, 15, 20, 30, 40, 60, 80, 120, 160],
            sigma: vec![1.0, 2.0, 4.0],
            dt: 0.5,
            init_radius: 3.0,
        }
    }
}

impl FitGrid {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_empty() || self.alpha.is_empty() || self.steps.is_empty() || self.sigma.is_empty() {
            return Err(Error::validation("grid", "every axis needs at least one value"));
        }
        let mut sorted = self.steps.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.steps {
            return Err(Error::validation("grid.steps", "must be strictly increasing"));
        }
        for (i, &e) in self.epsilon.iter().enumerate() {
            for (j, &a) in self.alpha.iter().enumerate() {
                for (k, &s) in self.sigma.iter().enumerate() {
                    let p = self.params(i, j, k, 0);
                    p.validate()
                        .map_err(|err| err.context(format!("grid point epsilon={e} alpha={a} sigma={s}")))?;
                }
            }
        }
        Ok(())
    }

    fn params(&self, ie: usize, ia: usize, ig: usize, is: usize) -> LevelSetParams {
        LevelSetParams {
            epsilon: self.epsilon[ie],
            alpha: self.alpha[ia],
            sigma: self.sigma[ig],
            dt: self.dt,
            steps: self.steps[is],
            init_radius: self.init_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: LevelSetParams,
    pub mean_dsc: f64,
    /// Distinct `(epsilon, alpha, sigma)` evolutions run.
    pub evaluations: usize,
}

fn speed_maps(train: &[PairedSample], sigma: f64) -> Result<Vec<SpeedMap>> {
    train.iter().map(|s| speed_map(&s.image, sigma)).collect()
}

fn mean_dsc_per_step(
    train: &[PairedSample],
    maps: &[SpeedMap],
    grid: &FitGrid,
    epsilon: f64,
    alpha: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    let last = *grid.steps.last().expect("validated grid");
    let mut sums = vec![0.0; grid.steps.len()];
    for (s, g) in train.iter().zip(maps) {
        let params = LevelSetParams {
            epsilon,
            alpha,
            sigma,
            dt: grid.dt,
            steps: last,
            init_radius: grid.init_radius,
        };
        let phi = init_phi(s.image.width(), s.image.height(), seed_point(&s.mask), grid.init_radius)?;
        let mut err = None;
        evolve_observed(&phi, g, &params, |step, phi| {
            if let Ok(k) = grid.steps.binary_search(&step) {
                match dice(&phi_to_mask(phi), &s.mask) {
                    Ok(d) => sums[k] += d.dsc,
                    Err(e) => err = Some(e),
                }
            }
        })
        .map_err(|e| e.context(format!("level set on sample `{}`", s.id)))?;
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(sums.into_iter().map(|v| v / train.len() as f64).collect())
}

/// Mean training Dice for every step count of the grid at one
/// `(epsilon, alpha, sigma)` point.
pub fn evaluate_grid_point(
    train: &[PairedSample],
    grid: &FitGrid,
    epsilon: f64,
    alpha: f64,
    sigma: f64,
) -> Result<Vec<f64>> {
    grid.validate()?;
    if train.is_empty() {
        return Err(Error::validation("train", "must not be empty"));
    }
    mean_dsc_per_step(train, &speed_maps(train, sigma)?, grid, epsilon, alpha, sigma)
}

/// Higher score first, then smaller steps, epsilon, alpha and sigma.
fn rank(grid: &FitGrid, a: (f64, [usize; 4]), b: (f64, [usize; 4])) -> Ordering {
    const TIE: f64 = 1e-12;
    if (a.0 - b.0).abs() > TIE {
        return b.0.total_cmp(&a.0);
    }
    let key = |i: [usize; 4]| {
        [
            grid.steps[i[2]] as f64,
            grid.epsilon[i[0]],
            grid.alpha[i[1]],
            grid.sigma[i[3]],
        ]
    };
    let (ka, kb) = (key(a.1), key(b.1));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Coordinate descent over `(epsilon, alpha, steps, sigma)` maximizing mean
/// Dice on `train`. Each sample is seeded at the centroid of its mask.
pub fn fit_params(train: &[PairedSample], grid: &FitGrid) -> Result<FitResult> {
    grid.validate()?;
    if train.is_empty() {
        return Err(Error::validation("train", "must not be empty"));
    }
    let mut maps: HashMap<usize, Vec<SpeedMap>> = HashMap::new();
    let mut cache: HashMap<(usize, usize, usize), Vec<f64>> = HashMap::new();
    let mut score = |idx: [usize; 4]| -> Result<f64> {
        let key = (idx[0], idx[1], idx[3]);
        if let Entry::Vacant(slot) = cache.entry(key) {
            if let Entry::Vacant(m) = maps.entry(idx[3]) {
                m.insert(speed_maps(train, grid.sigma[idx[3]])?);
            }
            let v = mean_dsc_per_step(
                train,
                &maps[&idx[3]],
                grid,
                grid.epsilon[idx[0]],
                grid.alpha[idx[1]],
                grid.sigma[idx[3]],
            )?;
            log::debug!(
                "level set grid epsilon={} alpha={} sigma={}: best {:.4}",
                grid.epsilon[idx[0]],
                grid.alpha[idx[1]],
                grid.sigma[idx[3]],
                v.iter().copied().fold(0.0, f64::max)
            );
            slot.insert(v);
        }
        Ok(cache[&key][idx[2]])
    };

    // epsilon, alpha, steps, sigma
    let lens = [grid.epsilon.len(), grid.alpha.len(), grid.steps.len(), grid.sigma.len()];
    let mut cur = [0, 0, 0, grid.sigma.len() / 2];
    let mut cur_score = score(cur)?;
    for _round in 0..32 {
        let mut moved = false;
        for axis in [0, 1, 2, 3] {
            let mut best = (cur_score, cur);
            for v in 0..lens[axis] {
                let mut idx = cur;
                idx[axis] = v;
                let cand = (score(idx)?, idx);
                if rank(grid, cand, best).is_lt() {
                    best = cand;
                }
            }
            if best.1 != cur {
                cur = best.1;
                cur_score = best.0;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(FitResult {
        params: grid.params(cur[0], cur[1], cur[3], cur[2]),
        mean_dsc: cur_score,
        evaluations: cache.len(),
    })
}

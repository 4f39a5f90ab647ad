use std::fmt::Write as _;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dice, mean_std};
use crate::error::{Error, Result};
use crate::phantom::PairedSample;
use crate::trainer::{segment, train, Regime, TrainConfig};

/// Grid of training runs: every size × regime × seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub training_sizes: Vec<usize>,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    /// Seed of the pool permutation whose prefixes form the subsets.
    #[serde(default)]
    pub subset_seed: u64,
    /// Template for every cell; regime and seed are overridden per cell.
    #[serde(default)]
    pub train: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self, pool: usize) -> Result<()> {
        if self.training_sizes.is_empty() || self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(Error::validation("sweep", "sizes, regimes and seeds must be non-empty"));
        }
        for &s in &self.training_sizes {
            if s == 0 || s > pool {
                return Err(Error::validation(
                    "training_sizes",
                    format!("size {s} outside 1..={pool}"),
                ));
            }
        }
        self.train.validate()
    }

    /// Cells in emission order.
    pub fn cells(&self) -> Vec<(usize, Regime, u64)> {
        let mut out = Vec::new();
        for &size in &self.training_sizes {
            for &regime in &self.regimes {
                for &seed in &self.seeds {
                    out.push((size, regime, seed));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub regime: Regime,
    pub seed: u64,
    pub mean_dsc: f64,
    pub std_dsc: f64,
    pub n_test: usize,
}

/// Index sets for each size: prefixes of one seeded permutation of the pool,
/// so smaller subsets are always contained in larger ones.
pub fn subset_indices(pool: usize, sizes: &[usize], seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..pool).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    sizes.iter().map(|&k| perm[..k.min(pool)].to_vec()).collect()
}

fn run_cell(
    pool: &[PairedSample],
    subset: &[usize],
    val: &[PairedSample],
    test: &[PairedSample],
    spec: &SweepSpec,
    regime: Regime,
    seed: u64,
) -> Result<(f64, f64)> {
    let cfg = TrainConfig {
        regime,
        seed,
        ..spec.train.clone()
    };
    let train_set: Vec<PairedSample> = subset.iter().map(|&i| pool[i].clone()).collect();
    let (ckpt, _) = train(&train_set, val, &cfg)?;
    let scores = test
        .iter()
        .map(|s| Ok(dice(&segment(&s.image, &ckpt, 0.0)?, &s.mask)?.dsc))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&scores))
}

/// Trains and tests every cell of `spec`; `jobs` cells run concurrently.
pub fn run_sweep(
    pool: &[PairedSample],
    val: &[PairedSample],
    test: &[PairedSample],
    spec: &SweepSpec,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    spec.validate(pool.len())?;
    if test.is_empty() {
        return Err(Error::validation("test_set", "must not be empty"));
    }
    let subsets = subset_indices(pool.len(), &spec.training_sizes, spec.subset_seed);
    let cells = spec.cells();
    let results: Vec<Mutex<Option<Result<(f64, f64)>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let work = || loop {
        let i = {
            let mut n = next.lock().expect("queue lock");
            let i = *n;
            *n += 1;
            i
        };
        let Some(&(size, regime, seed)) = cells.get(i) else { break };
        let k = spec.training_sizes.iter().position(|&s| s == size).expect("size in spec");
        log::info!("sweep cell size={size} regime={} seed={seed}", regime.as_str());
        let r = run_cell(pool, &subsets[k], val, test, spec, regime, seed).map_err(|e| {
            e.context(format!("sweep cell size={size} regime={} seed={seed}", regime.as_str()))
        });
        *results[i].lock().expect("result lock") = Some(r);
    };
    let jobs = jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 1..jobs {
            s.spawn(work);
        }
        work();
    });
    let mut rows = Vec::with_capacity(cells.len());
    for ((size, regime, seed), slot) in cells.into_iter().zip(results) {
        let (mean_dsc, std_dsc) = slot.into_inner().expect("result lock").expect("cell ran")?;
        rows.push(SweepRow {
            size,
            regime,
            seed,
            mean_dsc,
            std_dsc,
            n_test: test.len(),
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("size,regime,seed,mean_dsc,std_dsc,n\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{}",
            r.size,
            r.regime.as_str(),
            r.seed,
            r.mean_dsc,
            r.std_dsc,
            r.n_test
        );
    }
    s
}

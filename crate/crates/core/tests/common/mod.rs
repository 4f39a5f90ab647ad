#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spcgan::losses::{LossWeights, Regime};
use spcgan::netzoo::Network;
use spcgan::phantom::{generate_phantom, PairedSample, PhantomSpec};
use spcgan::tensor::Tensor;
use spcgan::trainer::{generator_pass, Nets};

/// Both values below this magnitude count as agreeing.
pub const FD_FLOOR: f64 = 1e-7;

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a.abs() < FD_FLOOR && b.abs() < FD_FLOOR {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

pub struct FdOutcome {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl FdOutcome {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.checked as f64
    }
}

/// Which network and flat index to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Slot {
    GAb,
    GBa,
}

fn net_mut(nets: &mut Nets<f64>, slot: Slot) -> &mut Network<f64> {
    match slot {
        Slot::GAb => &mut nets.g_ab,
        Slot::GBa => nets.g_ba.as_mut().expect("backward generator"),
    }
}

fn net_ref(nets: &Nets<f64>, slot: Slot) -> &Network<f64> {
    match slot {
        Slot::GAb => &nets.g_ab,
        Slot::GBa => nets.g_ba.as_ref().expect("backward generator"),
    }
}

/// Locates flat index `k` as `(tensor index, offset)`.
fn locate(net: &Network<f64>, mut k: usize) -> (usize, usize) {
    for (i, (_, t)) in net.named_params().enumerate() {
        if k < t.len() {
            return (i, k);
        }
        k -= t.len();
    }
    panic!("index out of range");
}

fn perturb(nets: &mut Nets<f64>, slot: Slot, tensor: usize, offset: usize, delta: f64) {
    let (_, t) = net_mut(nets, slot).params_mut().nth(tensor).expect("tensor");
    t.data_mut()[offset] += delta;
}

/// Central differences of the regime's generator objective against the
/// analytic gradient on `n` randomly chosen generator parameters.
pub fn fd_check_generators(
    nets: &mut Nets<f64>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
    w: &LossWeights,
    regime: Regime,
    n: usize,
    h: f64,
    seed: u64,
) -> FdOutcome {
    let pass = generator_pass(nets, a, b, w, regime, true).expect("analytic pass");
    let grads = pass.grads.expect("gradients");
    let mut slots = vec![Slot::GAb];
    if regime.uses_backward() {
        slots.push(Slot::GBa);
    }
    let sizes: Vec<usize> = slots.iter().map(|&s| net_ref(nets, s).parameter_count()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FdOutcome {
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    for _ in 0..n {
        let mut k = rng.random_range(0..total);
        let mut si = 0;
        while k >= sizes[si] {
            k -= sizes[si];
            si += 1;
        }
        let slot = slots[si];
        let (tensor, offset) = locate(net_ref(nets, slot), k);
        let key = net_ref(nets, slot).key(tensor);
        let analytic = grads.param(key).map_or(0.0, |g| g.data()[offset]);
        perturb(nets, slot, tensor, offset, h);
        let up = generator_pass(nets, a, b, w, regime, false).unwrap().report.total;
        perturb(nets, slot, tensor, offset, -2.0 * h);
        let down = generator_pass(nets, a, b, w, regime, false).unwrap().report.total;
        perturb(nets, slot, tensor, offset, h);
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic, numeric);
        out.checked += 1;
        if e <= 1e-2 {
            out.passed += 1;
        }
        out.worst = out.worst.max(e);
    }
    out
}

pub fn phantom_spec(size: usize) -> PhantomSpec {
    let r = size as f64;
    PhantomSpec {
        canvas: [size, size],
        lesion_radius_range: [0.1 * r, 0.2 * r],
        ..PhantomSpec::default()
    }
}

pub fn phantoms(size: usize, n: usize, seed0: u64) -> Vec<PairedSample> {
    let spec = phantom_spec(size);
    (0..n as u64).map(|i| generate_phantom(&spec, seed0 + i).unwrap()).collect()
}

//! Training regimes, schedule, model selection and inference.

mod checkpoint;
mod objective;

pub use checkpoint::Checkpoint;
pub use objective::{discriminator_pass, generator_pass, sample_tensors, GenPass, Nets};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::losses::Regime;
use crate::losses::{LossReport, LossWeights};
use crate::netzoo::{build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig};
use crate::phantom::{augment, AugConfig, GrayImage, PairedSample, SegMask};
use crate::tensor::optim::Adam;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValMetric {
    /// Lowest mean validation objective.
    #[default]
    Loss,
    /// Highest mean validation Dice.
    Dice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub generator: GeneratorConfig,
    pub disc_base_width: usize,
    /// Dilated layers of the pixel-wise mask discriminator.
    pub pixel_disc_layers: usize,
    /// Strided layers of the patch image discriminator.
    pub patch_disc_layers: usize,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_start_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub aug: AugConfig,
    pub seed: u64,
    pub pool_size: usize,
    pub val_every: usize,
    pub val_metric: ValMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Spcgan,
            generator: GeneratorConfig::default(),
            disc_base_width: 64,
            pixel_disc_layers: 4,
            patch_disc_layers: 3,
            weights: LossWeights::default(),
            epochs: 1500,
            batch_size: 1,
            lr: 2e-4,
            decay_start_epoch: 750,
            beta1: 0.5,
            beta2: 0.999,
            aug: AugConfig::default(),
            seed: 0,
            pool_size: 50,
            val_every: 10,
            val_metric: ValMetric::Loss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.weights.validate()?;
        self.aug.validate()?;
        if self.decay_start_epoch > self.epochs {
            return Err(Error::validation(
                "decay_start_epoch",
                format!("{} exceeds epochs {}", self.decay_start_epoch, self.epochs),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", format!("must be > 0, got {}", self.lr)));
        }
        if self.batch_size != 1 {
            return Err(Error::validation("batch_size", "only batch size 1 is supported"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(field, format!("must be in [0, 1), got {b}")));
            }
        }
        for (field, v) in [
            ("disc_base_width", self.disc_base_width),
            ("pixel_disc_layers", self.pixel_disc_layers),
            ("patch_disc_layers", self.patch_disc_layers),
            ("val_every", self.val_every),
        ] {
            if v == 0 {
                return Err(Error::validation(field, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn pixel_disc(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            n_layers: self.pixel_disc_layers,
            ..DiscriminatorConfig::pixelwise(self.disc_base_width)
        }
    }

    pub fn patch_disc(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            n_layers: self.patch_disc_layers,
            ..DiscriminatorConfig::patch(self.disc_base_width)
        }
    }
}

/// Constant rate until `decay_start_epoch`, then linear decay to zero at `epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::Domain(format!("epoch {epoch} beyond {} epochs", cfg.epochs)));
    }
    if epoch < cfg.decay_start_epoch || cfg.epochs == cfg.decay_start_epoch {
        return Ok(cfg.lr);
    }
    let span = (cfg.epochs - cfg.decay_start_epoch) as f64;
    Ok(cfg.lr * ((cfg.epochs - epoch) as f64 / span))
}

/// Derives an independent seed for a named random stream.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

/// History of generated samples shown to the discriminators. Once full,
/// each query returns a stored sample (replacing it) with probability 1/2.
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor<f32>>,
    rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            images: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn query(&mut self, image: Tensor<f32>) -> Tensor<f32> {
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if self.rng.random::<f64>() < 0.5 {
            let i = self.rng.random_range(0..self.capacity);
            std::mem::replace(&mut self.images[i], image)
        } else {
            image
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRow {
    pub iteration: usize,
    pub epoch: usize,
    pub report: LossReport,
    pub d_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    /// Completed epochs at the time of validation.
    pub epoch: usize,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations: Vec<IterRow>,
    pub validations: Vec<ValRow>,
}

impl TrainLog {
    pub fn iterations_csv(&self) -> String {
        let mut s = String::from("iteration,epoch,adv_forward,adv_backward,cyc,pix,total\n");
        for r in &self.iterations {
            let p = &r.report;
            let _ = writeln!(
                s,
                "{},{},{:.8},{:.8},{:.8},{:.8},{:.8}",
                r.iteration, r.epoch, p.adv_forward, p.adv_backward, p.cyc, p.pix, p.total
            );
        }
        s
    }

    pub fn validations_csv(&self) -> String {
        let mut s = String::from("epoch,val_loss,val_dice\n");
        for v in &self.validations {
            let _ = writeln!(s, "{},{:.8},{:.8}", v.epoch, v.val_loss, v.val_dice);
        }
        s
    }

    /// Writes `train_log.csv` and `val_log.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("train_log.csv", self.iterations_csv()),
            ("val_log.csv", self.validations_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Mean of each epoch's iteration totals.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.iterations {
            match out.last_mut() {
                Some((e, sum, n)) if *e == r.epoch => {
                    *sum += r.report.total;
                    *n += 1;
                }
                _ => out.push((r.epoch, r.report.total, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::NumericFault { term, value, .. } => Error::NumericFault {
            term,
            iteration,
            value,
        },
        other => other,
    }
}

/// Builds the regime's networks with seeds derived from `cfg.seed`.
pub fn build_nets(cfg: &TrainConfig) -> Result<Nets> {
    cfg.validate()?;
    let s = cfg.seed;
    let mut g_cfg = cfg.generator.clone();
    let g_ab = build_generator(&g_cfg, derive_seed(s, 1))?;
    let (mut g_ba, mut d_forward, mut d_backward) = (None, None, None);
    if cfg.regime.uses_forward_disc() {
        d_forward = Some(build_discriminator(&cfg.pixel_disc(), derive_seed(s, 3))?);
    }
    if cfg.regime.uses_backward() {
        g_cfg.in_channels = cfg.generator.out_channels;
        g_cfg.out_channels = cfg.generator.in_channels;
        g_ba = Some(build_generator(&g_cfg, derive_seed(s, 2))?);
        d_backward = Some(build_discriminator(&cfg.patch_disc(), derive_seed(s, 4))?);
    }
    Ok(Nets {
        g_ab,
        g_ba,
        d_forward,
        d_backward,
    })
}

/// Stateful alternating optimizer: one generator step, then one
/// discriminator step, per sample.
pub struct Trainer {
    cfg: TrainConfig,
    nets: Nets,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    pool_a: ImagePool,
    pool_b: ImagePool,
    iteration: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let nets = build_nets(cfg)?;
        Ok(Self {
            nets,
            opt_g: Adam::new(cfg.beta1, cfg.beta2),
            opt_d: Adam::new(cfg.beta1, cfg.beta2),
            pool_a: ImagePool::new(cfg.pool_size, derive_seed(cfg.seed, 5)),
            pool_b: ImagePool::new(cfg.pool_size, derive_seed(cfg.seed, 6)),
            iteration: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn pool_sizes(&self) -> (usize, usize) {
        (self.pool_a.len(), self.pool_b.len())
    }

    /// Updates the generators only; returns the loss report and the fakes.
    pub fn generator_step(&mut self, sample: &PairedSample, lr: f64) -> Result<GenPass<f32>> {
        let (a, b) = sample_tensors(sample)?;
        let mut pass = generator_pass(&self.nets, &a, &b, &self.cfg.weights, self.cfg.regime, true)
            .map_err(|e| at_iteration(e, self.iteration))?;
        let grads = pass.grads.take().expect("gradients requested");
        for net in self.nets.generators_mut() {
            self.opt_g.step(net.params_mut(), &grads, lr);
        }
        Ok(pass)
    }

    /// Updates the discriminators only, on the real pair vs pooled fakes.
    pub fn discriminator_step(
        &mut self,
        sample: &PairedSample,
        fake_a: Option<Tensor<f32>>,
        fake_b: Tensor<f32>,
        lr: f64,
    ) -> Result<f64> {
        if !self.cfg.regime.uses_forward_disc() {
            return Ok(0.0);
        }
        let (a, b) = sample_tensors(sample)?;
        let fb = self.pool_b.query(fake_b);
        let fa = fake_a.map(|t| self.pool_a.query(t));
        let (loss, grads) =
            discriminator_pass(&self.nets, &a, &b, fa.as_ref(), &fb, self.cfg.weights.gan_form, true)
                .map_err(|e| at_iteration(e, self.iteration))?;
        if let Some(grads) = grads {
            for net in self.nets.discriminators_mut() {
                self.opt_d.step(net.params_mut(), &grads, lr);
            }
        }
        Ok(loss)
    }

    /// One training iteration on one (already augmented) sample.
    pub fn step(&mut self, sample: &PairedSample, epoch: usize, lr: f64) -> Result<IterRow> {
        let pass = self.generator_step(sample, lr)?;
        let d_loss = self.discriminator_step(sample, pass.fake_a, pass.fake_b, lr)?;
        let row = IterRow {
            iteration: self.iteration,
            epoch,
            report: pass.report,
            d_loss,
            lr,
        };
        self.iteration += 1;
        Ok(row)
    }

    /// Mean regime objective and mean Dice over `samples`, no augmentation.
    pub fn evaluate(&self, samples: &[PairedSample]) -> Result<(f64, f64)> {
        evaluate_nets(&self.nets, &self.cfg, samples)
    }
}

pub fn evaluate_nets(nets: &Nets, cfg: &TrainConfig, samples: &[PairedSample]) -> Result<(f64, f64)> {
    let (mut loss, mut dsc) = (0.0, 0.0);
    for s in samples {
        let (a, b) = sample_tensors(s)?;
        let pass = generator_pass(nets, &a, &b, &cfg.weights, cfg.regime, false)?;
        loss += pass.report.total;
        let mask = threshold_output(&pass.fake_b, 0.0)?;
        dsc += crate::evalstat::dice(&mask, &s.mask)?.dsc;
    }
    let n = samples.len().max(1) as f64;
    Ok((loss / n, dsc / n))
}

fn threshold_output(out: &Tensor<f32>, threshold: f64) -> Result<SegMask> {
    let [_, _, h, w] = out.shape();
    let bits: Vec<bool> = out.data().iter().map(|&v| v as f64 >= threshold).collect();
    SegMask::from_bools(w, h, &bits)
}

fn better(metric: ValMetric, row: &ValRow, best: Option<&ValRow>) -> bool {
    match best {
        None => true,
        Some(b) => match metric {
            ValMetric::Loss => row.val_loss < b.val_loss,
            ValMetric::Dice => row.val_dice > b.val_dice,
        },
    }
}

/// Runs the full schedule and returns the selected checkpoint and the log.
pub fn train(
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("train_set", "must not be empty"));
    }
    let div = cfg.generator.divisor();
    for s in train_set.iter().chain(val_set) {
        if s.image.width() % div != 0 || s.image.height() % div != 0 {
            return Err(Error::Shape(format!(
                "sample `{}` is {}x{}, not divisible by {div}",
                s.id,
                s.image.width(),
                s.image.height()
            )));
        }
    }
    if val_set.is_empty() {
        log::warn!("empty validation set; keeping the final epoch");
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut log = TrainLog::default();
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 7));
    let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 8));
    let mut best: Option<(ValRow, Nets)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for &i in &order {
            let sample = augment(&train_set[i], &cfg.aug, aug_rng.random())?;
            let row = trainer.step(&sample, epoch, lr)?;
            sum += row.report.total;
            log.iterations.push(row);
        }
        let done = epoch + 1;
        log::info!(
            "epoch {done}/{}: mean total {:.5}, lr {:.3e}",
            cfg.epochs,
            sum / order.len() as f64,
            lr
        );
        if !val_set.is_empty() && (done % cfg.val_every == 0 || done == cfg.epochs) {
            let (val_loss, val_dice) = trainer.evaluate(val_set)?;
            let row = ValRow {
                epoch: done,
                val_loss,
                val_dice,
            };
            log::info!("validation at epoch {done}: loss {val_loss:.5}, dice {val_dice:.4}");
            if better(cfg.val_metric, &row, best.as_ref().map(|b| &b.0)) {
                best = Some((row.clone(), trainer.nets.clone()));
            }
            log.validations.push(row);
        }
    }

    let ckpt = match best {
        Some((row, nets)) => Checkpoint {
            config: cfg.clone(),
            epoch: row.epoch,
            val_loss: Some(row.val_loss),
            val_dice: Some(row.val_dice),
            nets,
        },
        None => Checkpoint {
            config: cfg.clone(),
            epoch: cfg.epochs,
            val_loss: None,
            val_dice: None,
            nets: trainer.nets,
        },
    };
    Ok((ckpt, log))
}

/// Raw forward-generator output on an image, on the `[-1, 1]` scale.
pub fn predict(img: &GrayImage, ckpt: &Checkpoint) -> Result<Tensor<f32>> {
    let x = Tensor::from_grid(img.height(), img.width(), img.data().to_vec())?;
    ckpt.nets.g_ab.forward(&x)
}

/// Binary segmentation: output `>= threshold` on the internal scale, so 0.0
/// corresponds to 0.5 in mask units.
pub fn segment(img: &GrayImage, ckpt: &Checkpoint, threshold: f64) -> Result<SegMask> {
    threshold_output(&predict(img, ckpt)?, threshold)
}

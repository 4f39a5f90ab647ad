//! Generator and discriminator networks on top of the autodiff tape.
//!
//! A [`Network`] owns named parameter tensors; its forward pass records onto
//! a [`Tape`] by borrowing them, so gradients come back keyed by
//! [`ParamKey`] with the network's unique id.

mod arch;
mod archive;

pub use archive::{read_archive, write_archive, ArchiveTensor, TensorArchive, ARCHIVE_VERSION};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::autograd::{ParamKey, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Resnet9,
    Unet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub backbone: Backbone,
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Residual blocks (resnet9 only).
    pub n_res_blocks: usize,
    /// Encoder/decoder levels (unet only).
    pub unet_depth: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Resnet9,
            in_channels: 1,
            out_channels: 1,
            base_width: 64,
            n_res_blocks: 9,
            unet_depth: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn resnet9(base_width: usize) -> Self {
        Self {
            base_width,
            ..Self::default()
        }
    }

    pub fn unet(base_width: usize, depth: usize) -> Self {
        Self {
            backbone: Backbone::Unet,
            base_width,
            unet_depth: depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("base_width", self.base_width),
            ("n_res_blocks", self.n_res_blocks),
            ("unet_depth", self.unet_depth),
        ] {
            if v == 0 {
                return Err(Error::validation(field, "must be >= 1"));
            }
        }
        if self.unet_depth > 12 {
            return Err(Error::validation("unet_depth", "must be <= 12"));
        }
        Ok(())
    }

    /// Spatial dimensions must be multiples of this.
    pub fn divisor(&self) -> usize {
        match self.backbone {
            Backbone::Resnet9 => 4,
            Backbone::Unet => 1 << self.unet_depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    /// Full-resolution score map over masks.
    PixelwiseForward,
    /// Strided patch scores over images.
    PatchBackward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub in_channels: usize,
    pub base_width: usize,
    /// Strided layers (patch) or dilated layers (pixelwise).
    pub n_layers: usize,
}

impl DiscriminatorConfig {
    pub fn pixelwise(base_width: usize) -> Self {
        Self {
            kind: DiscriminatorKind::PixelwiseForward,
            in_channels: 1,
            base_width,
            n_layers: 4,
        }
    }

    pub fn patch(base_width: usize) -> Self {
        Self {
            kind: DiscriminatorKind::PatchBackward,
            in_channels: 1,
            base_width,
            n_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("in_channels", self.in_channels),
            ("base_width", self.base_width),
            ("n_layers", self.n_layers),
        ] {
            if v == 0 {
                return Err(Error::validation(field, "must be >= 1"));
            }
        }
        if self.kind == DiscriminatorKind::PixelwiseForward && self.n_layers > 10 {
            return Err(Error::validation("n_layers", "pixelwise dilation depth must be <= 10"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum NetConfig {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetConfig::Generator(g) => g.validate(),
            NetConfig::Discriminator(d) => d.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ParamInfo {
    name: String,
    is_bias: bool,
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// A parametric map with named weights.
#[derive(Debug)]
pub struct Network<T: Real = f32> {
    id: u64,
    config: NetConfig,
    seed: u64,
    info: Vec<ParamInfo>,
    params: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

/// Clones keep the parameter values but receive a new id, so their
/// gradients never alias the original's.
impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            config: self.config.clone(),
            seed: self.seed,
            info: self.info.clone(),
            params: self.params.clone(),
            index: self.index.clone(),
        }
    }
}

pub fn build_generator<T: Real>(cfg: &GeneratorConfig, seed: u64) -> Result<Network<T>> {
    Network::build(NetConfig::Generator(cfg.clone()), seed)
}

pub fn build_discriminator<T: Real>(cfg: &DiscriminatorConfig, seed: u64) -> Result<Network<T>> {
    Network::build(NetConfig::Discriminator(cfg.clone()), seed)
}

/// Redraws every weight from N(0, 0.02) and zeroes every bias.
pub fn init_weights<T: Real>(net: &mut Network<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    for (p, info) in net.params.iter_mut().zip(&net.info) {
        for v in p.data_mut() {
            *v = if info.is_bias {
                T::zero()
            } else {
                T::from_f64c(normal.sample(&mut rng))
            };
        }
    }
    net.seed = seed;
}

impl<T: Real> Network<T> {
    fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = arch::layout(&config);
        let mut net = Self::zeroed(config, seed, layout);
        init_weights(&mut net, seed);
        Ok(net)
    }

    fn zeroed(config: NetConfig, seed: u64, layout: Vec<(String, [usize; 4])>) -> Self {
        let mut info = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        let mut index = BTreeMap::new();
        for (i, (name, shape)) in layout.into_iter().enumerate() {
            index.insert(name.clone(), i);
            info.push(ParamInfo {
                is_bias: name.ends_with(".bias"),
                name,
            });
            params.push(Tensor::zeros(shape));
        }
        Self {
            id: fresh_id(),
            config,
            seed,
            info,
            params,
            index,
        }
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_named(
        config: NetConfig,
        seed: u64,
        mut named: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = arch::layout(&config);
        let mut net = Self::zeroed(config, seed, layout);
        for (info, slot) in net.info.iter().zip(net.params.iter_mut()) {
            let t = named
                .remove(&info.name)
                .ok_or_else(|| Error::Shape(format!("missing parameter `{}`", info.name)))?;
            if t.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    info.name,
                    t.shape(),
                    slot.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::NumericFault {
                    term: format!("parameter `{}`", info.name),
                    iteration: 0,
                    value: f64::NAN,
                });
            }
            *slot = t;
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Shape(format!("unexpected parameter `{extra}`")));
        }
        Ok(net)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.info.iter().map(|i| i.name.as_str())
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.info.iter().map(|i| i.name.as_str()).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn key(&self, index: usize) -> ParamKey {
        ParamKey {
            net: self.id,
            index,
        }
    }

    pub fn key_of(&self, name: &str) -> Option<ParamKey> {
        self.index.get(name).map(|&i| self.key(i))
    }

    /// `(key, tensor)` pairs for an optimizer step.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamKey, &mut Tensor<T>)> {
        let id = self.id;
        self.params
            .iter_mut()
            .enumerate()
            .map(move |(index, t)| (ParamKey { net: id, index }, t))
    }

    /// All parameters concatenated in layout order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn weights_and_biases(&self) -> (Vec<T>, Vec<T>) {
        let (mut w, mut b) = (Vec::new(), Vec::new());
        for (info, t) in self.info.iter().zip(&self.params) {
            let dst = if info.is_bias { &mut b } else { &mut w };
            dst.extend_from_slice(t.data());
        }
        (w, b)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    /// Same network in another precision; keeps the id so keys line up.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            id: self.id,
            config: self.config.clone(),
            seed: self.seed,
            info: self.info.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Checks that an `h x w` input is acceptable.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        let (want_c, div) = match &self.config {
            NetConfig::Generator(g) => (g.in_channels, g.divisor()),
            NetConfig::Discriminator(d) => (d.in_channels, 1),
        };
        if c != want_c {
            return Err(Error::Shape(format!("expected {want_c} input channels, got {c}")));
        }
        if h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by {div}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Discriminators return raw scores
    /// (no squashing); generators end in tanh.
    pub fn forward_on<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, trainable: bool) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let mut ctx = arch::Ctx {
            tape,
            net: self,
            trainable,
        };
        let out = match &self.config {
            NetConfig::Generator(g) => match g.backbone {
                Backbone::Resnet9 => arch::resnet_forward(&mut ctx, g, x)?,
                Backbone::Unet => arch::unet_forward(&mut ctx, g, x)?,
            },
            NetConfig::Discriminator(d) => match d.kind {
                DiscriminatorKind::PatchBackward => arch::patch_forward(&mut ctx, d, x)?,
                DiscriminatorKind::PixelwiseForward => arch::pixel_forward(&mut ctx, d, x)?,
            },
        };
        let value = ctx.tape.value(out);
        if let Some(v) = value.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                term: "network output".into(),
                iteration: 0,
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(out)
    }

    /// Inference without gradients.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward_on(&mut tape, x, false)?;
        Ok(tape.value(y).clone())
    }
}

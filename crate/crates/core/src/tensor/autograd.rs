//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward evaluation. Network
//! parameters enter the tape by reference, so building a graph never copies
//! weights; [`Tape::backward`] returns owned gradients keyed by
//! [`ParamKey`], leaving the caller free to mutate the networks afterwards.

use std::collections::BTreeMap;

use super::conv::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identifies a parameter tensor: owning network and position within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub net: u64,
    pub index: usize,
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<T> {
    Constant,
    Input,
    Param(ParamKey),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ReflectionPad {
        x: Var,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    MeanAbsDiff(Var, Var),
    MeanSqDiff(Var, Var),
    MeanSqToConst(Var, T),
    MeanLog(Var),
    MeanLog1m(Var),
    Linear(Vec<(Var, T)>),
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    params: BTreeMap<ParamKey, Tensor<T>>,
    inputs: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor<T>> {
        self.params.get(&key)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&var)
    }

    /// Keys of every parameter that received a gradient.
    pub fn param_keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.params.keys()
    }

    /// True if any parameter of network `net` received a gradient.
    pub fn touches_net(&self, net: u64) -> bool {
        self.params.keys().any(|k| k.net == net)
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }
}

/// Recording of one forward evaluation.
pub struct Tape<'a, T> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// A borrowed parameter; frozen parameters still propagate gradients
    /// to their consumers' inputs but never receive one themselves.
    pub fn param(&mut self, key: ParamKey, value: &'a Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Param(key),
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = conv::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        output_padding: usize,
    ) -> Result<Var> {
        let out = conv::conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
            output_padding,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    pub fn reflection_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        if pad == 0 {
            return Ok(x);
        }
        let out = conv::reflection_pad(self.value(x), pad)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ReflectionPad { x, pad }, rg))
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (out, inv_std) = conv::instance_norm(self.value(x), T::from_f64c(1e-5));
        let rg = self.rg(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64c(slope);
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu(x, s), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Channel-axis concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).shape();
        let [nb, cb, hb, wb] = self.value(b).shape();
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for n in 0..na {
            data.extend_from_slice(&self.value(a).data()[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&self.value(b).data()[n * cb * plane..(n + 1) * cb * plane]);
        }
        let out = Tensor::from_vec([na, ca + cb, ha, wa], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::from_f64c(scale), T::from_f64c(shift));
        let out = self.value(x).map(|v| s * v + t);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale: s }, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Mean absolute difference, a scalar.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mean_abs_diff")?;
        let v = self
            .value(a)
            .zip_map(self.value(b), |x, y| (x - y).abs())
            .mean();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::MeanAbsDiff(a, b), rg))
    }

    /// Mean squared difference, a scalar.
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mean_sq_diff")?;
        let v = self
            .value(a)
            .zip_map(self.value(b), |x, y| (x - y) * (x - y))
            .mean();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::MeanSqDiff(a, b), rg))
    }

    /// `mean((x - target)^2)` against a constant target.
    pub fn mean_sq_to(&mut self, x: Var, target: f64) -> Var {
        let c = T::from_f64c(target);
        let v = self.value(x).map(|v| (v - c) * (v - c)).mean();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::MeanSqToConst(x, c), rg)
    }

    /// `mean(ln x)`; every element must be positive.
    pub fn mean_log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(bad) = t.data().iter().find(|v| !(**v > T::zero())) {
            return Err(Error::Domain(format!("log of non-positive value {bad:?}")));
        }
        let v = t.map(T::ln).mean();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::MeanLog(x), rg))
    }

    /// `mean(ln(1 - x))`; every element must be below one.
    pub fn mean_log1m(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(bad) = t.data().iter().find(|v| !(**v < T::one())) {
            return Err(Error::Domain(format!("log of non-positive value 1 - {bad:?}")));
        }
        let v = t.map(|v| (T::one() - v).ln()).mean();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::MeanLog1m(x), rg))
    }

    /// Weighted sum of scalar nodes.
    pub fn linear(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = T::zero();
        let mut rg = false;
        let mut stored = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::Shape(format!(
                    "linear combination expects scalars, got {:?}",
                    t.shape()
                )));
            }
            let w = T::from_f64c(w);
            acc += w * t.item();
            rg |= self.rg(v);
            stored.push((v, w));
        }
        Ok(self.push(Tensor::scalar(acc), Op::Linear(stored), rg))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = Gradients {
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = node.value.get();
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    out.inputs.insert(Var(i), g);
                }
                Op::Param(key) => match out.params.get_mut(key) {
                    // a network applied twice registers its parameters twice
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.params.insert(*key, g);
                    }
                },
                Op::Conv2d { x, w, b, geom } => {
                    let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                    let cg = conv::conv2d_backward(self.value(*x), self.value(*w), &g, geom, need);
                    self.route(&mut grads, *x, cg.input);
                    self.route(&mut grads, *w, cg.weight);
                    if let Some(b) = b {
                        self.route(&mut grads, *b, cg.bias);
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                    let cg = conv::conv_transpose2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        geom,
                        need,
                    );
                    self.route(&mut grads, *x, cg.input);
                    self.route(&mut grads, *w, cg.weight);
                    if let Some(b) = b {
                        self.route(&mut grads, *b, cg.bias);
                    }
                }
                Op::ReflectionPad { x, pad } => {
                    let gx = conv::reflection_pad_backward(&g, *pad);
                    self.route(&mut grads, *x, Some(gx));
                }
                Op::InstanceNorm { x, inv_std } => {
                    let gx = conv::instance_norm_backward(y, inv_std, &g);
                    self.route(&mut grads, *x, Some(gx));
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(y, |d, v| if v > T::zero() { d } else { T::zero() });
                    self.route(&mut grads, *x, Some(gx));
                }
                Op::LeakyRelu(x, s) => {
                    let s = *s;
                    let gx = g.zip_map(self.value(*x), |d, v| if v > T::zero() { d } else { d * s });
                    self.route(&mut grads, *x, Some(gx));
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(y, |d, v| d * (T::one() - v * v));
                    self.route(&mut grads, *x, Some(gx));
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(y, |d, v| d * v * (T::one() - v));
                    self.route(&mut grads, *x, Some(gx));
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        self.route(&mut grads, *b, Some(g.clone()));
                    }
                    self.route(&mut grads, *a, Some(g));
                }
                Op::Concat(a, b) => {
                    let [n, ca, h, w] = self.value(*a).shape();
                    let cb = self.value(*b).shape()[1];
                    let plane = h * w;
                    let mut ga = Vec::with_capacity(n * ca * plane);
                    let mut gb = Vec::with_capacity(n * cb * plane);
                    for chunk in g.data().chunks((ca + cb) * plane) {
                        ga.extend_from_slice(&chunk[..ca * plane]);
                        gb.extend_from_slice(&chunk[ca * plane..]);
                    }
                    self.route(&mut grads, *a, Some(Tensor::from_vec([n, ca, h, w], ga)?));
                    self.route(&mut grads, *b, Some(Tensor::from_vec([n, cb, h, w], gb)?));
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    self.route(&mut grads, *x, Some(g.map(|d| d * s)));
                }
                Op::MeanAbsDiff(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let k = g.item() / T::from_usize(va.len()).unwrap();
                    let ga = va.zip_map(vb, |p, q| {
                        let d = p - q;
                        if d > T::zero() {
                            k
                        } else if d < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    });
                    if self.rg(*b) {
                        self.route(&mut grads, *b, Some(ga.map(|v| -v)));
                    }
                    self.route(&mut grads, *a, Some(ga));
                }
                Op::MeanSqDiff(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let k = T::from_f64c(2.0) * g.item() / T::from_usize(va.len()).unwrap();
                    let ga = va.zip_map(vb, |p, q| k * (p - q));
                    if self.rg(*b) {
                        self.route(&mut grads, *b, Some(ga.map(|v| -v)));
                    }
                    self.route(&mut grads, *a, Some(ga));
                }
                Op::MeanSqToConst(x, c) => {
                    let vx = self.value(*x);
                    let k = T::from_f64c(2.0) * g.item() / T::from_usize(vx.len()).unwrap();
                    let c = *c;
                    self.route(&mut grads, *x, Some(vx.map(|p| k * (p - c))));
                }
                Op::MeanLog(x) => {
                    let vx = self.value(*x);
                    let k = g.item() / T::from_usize(vx.len()).unwrap();
                    self.route(&mut grads, *x, Some(vx.map(|p| k / p)));
                }
                Op::MeanLog1m(x) => {
                    let vx = self.value(*x);
                    let k = g.item() / T::from_usize(vx.len()).unwrap();
                    self.route(&mut grads, *x, Some(vx.map(|p| -k / (T::one() - p))));
                }
                Op::Linear(terms) => {
                    let d = g.item();
                    for &(v, w) in terms {
                        self.route(&mut grads, v, Some(Tensor::scalar(d * w)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn route(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Tensor<T>>) {
        let Some(g) = g else { return };
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

use super::{DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, NetConfig, Network};
use crate::error::Result;
use crate::tensor::autograd::{Tape, Var};
use crate::tensor::conv::ConvGeom;
use crate::tensor::Real;

const LRELU_SLOPE: f64 = 0.2;

type Layout = Vec<(String, [usize; 4])>;

fn conv(l: &mut Layout, name: &str, cin: usize, cout: usize, k: usize) {
    l.push((format!("{name}.weight"), [cout, cin, k, k]));
    l.push((format!("{name}.bias"), [1, cout, 1, 1]));
}

fn conv_t(l: &mut Layout, name: &str, cin: usize, cout: usize, k: usize) {
    l.push((format!("{name}.weight"), [cin, cout, k, k]));
    l.push((format!("{name}.bias"), [1, cout, 1, 1]));
}

fn unet_width(cfg: &GeneratorConfig, level: usize) -> usize {
    cfg.base_width * (1usize << level.min(3))
}

fn patch_width(cfg: &DiscriminatorConfig, layer: usize) -> usize {
    cfg.base_width * (1usize << layer.min(3))
}

pub(super) fn layout(config: &NetConfig) -> Layout {
    let mut l = Vec::new();
    match config {
        NetConfig::Generator(g) if g.backbone == super::Backbone::Resnet9 => {
            let bw = g.base_width;
            conv(&mut l, "stem", g.in_channels, bw, 7);
            conv(&mut l, "down0", bw, 2 * bw, 3);
            conv(&mut l, "down1", 2 * bw, 4 * bw, 3);
            for i in 0..g.n_res_blocks {
                conv(&mut l, &format!("res{i}.a"), 4 * bw, 4 * bw, 3);
                conv(&mut l, &format!("res{i}.b"), 4 * bw, 4 * bw, 3);
            }
            conv_t(&mut l, "up0", 4 * bw, 2 * bw, 3);
            conv_t(&mut l, "up1", 2 * bw, bw, 3);
            conv(&mut l, "head", bw, g.out_channels, 7);
        }
        NetConfig::Generator(g) => {
            let d = g.unet_depth;
            for lv in 0..d {
                let cin = if lv == 0 { g.in_channels } else { unet_width(g, lv - 1) };
                conv(&mut l, &format!("down{lv}"), cin, unet_width(g, lv), 4);
            }
            for lv in (0..d).rev() {
                let cin = if lv == d - 1 { 1 } else { 2 } * unet_width(g, lv);
                let cout = if lv == 0 { g.out_channels } else { unet_width(g, lv - 1) };
                conv_t(&mut l, &format!("up{lv}"), cin, cout, 4);
            }
        }
        NetConfig::Discriminator(dc) if dc.kind == DiscriminatorKind::PatchBackward => {
            let n = dc.n_layers;
            conv(&mut l, "layer0", dc.in_channels, dc.base_width, 4);
            for i in 1..=n {
                conv(&mut l, &format!("layer{i}"), patch_width(dc, i - 1), patch_width(dc, i), 4);
            }
            conv(&mut l, "head", patch_width(dc, n), 1, 4);
        }
        NetConfig::Discriminator(dc) => {
            conv(&mut l, "layer0", dc.in_channels, dc.base_width, 3);
            for i in 1..dc.n_layers {
                conv(&mut l, &format!("layer{i}"), dc.base_width, dc.base_width, 3);
            }
            conv(&mut l, "head", dc.base_width, 1, 1);
        }
    }
    l
}

pub(super) struct Ctx<'t, 'a, T: Real> {
    pub tape: &'t mut Tape<'a, T>,
    pub net: &'a Network<T>,
    pub trainable: bool,
}

impl<'a, T: Real> Ctx<'_, 'a, T> {
    fn param(&mut self, name: &str) -> Var {
        let net: &'a Network<T> = self.net;
        let i = net.index[name];
        self.tape.param(net.key(i), &net.params[i], self.trainable)
    }

    fn conv(&mut self, x: Var, name: &str, geom: ConvGeom) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"));
        let b = self.param(&format!("{name}.bias"));
        self.tape.conv2d(x, w, Some(b), geom)
    }

    /// Reflection padding followed by an unpadded convolution.
    fn conv_reflect(&mut self, x: Var, name: &str, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let x = self.tape.reflection_pad(x, pad)?;
        self.conv(x, name, ConvGeom::new(k, stride, 0))
    }

    fn conv_t(&mut self, x: Var, name: &str, geom: ConvGeom, output_padding: usize) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"));
        let b = self.param(&format!("{name}.bias"));
        self.tape.conv_transpose2d(x, w, Some(b), geom, output_padding)
    }
}

pub(super) fn resnet_forward<T: Real>(
    c: &mut Ctx<'_, '_, T>,
    g: &GeneratorConfig,
    x: Var,
) -> Result<Var> {
    let h = c.conv_reflect(x, "stem", 7, 1, 3)?;
    let h = c.tape.instance_norm(h);
    let mut h = c.tape.relu(h);
    for i in 0..2 {
        h = c.conv_reflect(h, &format!("down{i}"), 3, 2, 1)?;
        h = c.tape.instance_norm(h);
        h = c.tape.relu(h);
    }
    for i in 0..g.n_res_blocks {
        let y = c.conv_reflect(h, &format!("res{i}.a"), 3, 1, 1)?;
        let y = c.tape.instance_norm(y);
        let y = c.tape.relu(y);
        let y = c.conv_reflect(y, &format!("res{i}.b"), 3, 1, 1)?;
        let y = c.tape.instance_norm(y);
        h = c.tape.add(h, y)?;
    }
    for i in 0..2 {
        h = c.conv_t(h, &format!("up{i}"), ConvGeom::new(3, 2, 1), 1)?;
        h = c.tape.instance_norm(h);
        h = c.tape.relu(h);
    }
    let h = c.conv_reflect(h, "head", 7, 1, 3)?;
    Ok(c.tape.tanh(h))
}

/// Encoder/decoder with skip connections; each level halves the extent with
/// a 4x4 stride-2 convolution and doubles it back with a transposed one.
pub(super) fn unet_forward<T: Real>(
    c: &mut Ctx<'_, '_, T>,
    g: &GeneratorConfig,
    x: Var,
) -> Result<Var> {
    let d = g.unet_depth;
    let mut skips = Vec::with_capacity(d);
    let mut h = x;
    for lv in 0..d {
        if lv > 0 {
            h = c.tape.leaky_relu(h, LRELU_SLOPE);
        }
        h = c.conv_reflect(h, &format!("down{lv}"), 4, 2, 1)?;
        if lv > 0 && lv < d - 1 {
            h = c.tape.instance_norm(h);
        }
        skips.push(h);
    }
    let mut u = h;
    for lv in (0..d).rev() {
        u = c.tape.relu(u);
        u = c.conv_t(u, &format!("up{lv}"), ConvGeom::new(4, 2, 1), 0)?;
        if lv == 0 {
            u = c.tape.tanh(u);
        } else {
            u = c.tape.instance_norm(u);
            u = c.tape.concat(skips[lv - 1], u)?;
        }
    }
    Ok(u)
}

pub(super) fn patch_forward<T: Real>(
    c: &mut Ctx<'_, '_, T>,
    d: &DiscriminatorConfig,
    x: Var,
) -> Result<Var> {
    let h = c.conv(x, "layer0", ConvGeom::new(4, 2, 1))?;
    let mut h = c.tape.leaky_relu(h, LRELU_SLOPE);
    for i in 1..=d.n_layers {
        let stride = if i < d.n_layers { 2 } else { 1 };
        h = c.conv(h, &format!("layer{i}"), ConvGeom::new(4, stride, 1))?;
        h = c.tape.instance_norm(h);
        h = c.tape.leaky_relu(h, LRELU_SLOPE);
    }
    c.conv(h, "head", ConvGeom::new(4, 1, 1))
}

/// Stride-1 trunk with dilations 1, 2, 4, ... so the score map keeps the
/// input resolution.
pub(super) fn pixel_forward<T: Real>(
    c: &mut Ctx<'_, '_, T>,
    d: &DiscriminatorConfig,
    x: Var,
) -> Result<Var> {
    let h = c.conv(x, "layer0", ConvGeom::dilated(3, 1))?;
    let mut h = c.tape.leaky_relu(h, LRELU_SLOPE);
    for i in 1..d.n_layers {
        h = c.conv(h, &format!("layer{i}"), ConvGeom::dilated(3, 1 << i))?;
        h = c.tape.instance_norm(h);
        h = c.tape.leaky_relu(h, LRELU_SLOPE);
    }
    c.conv(h, "head", ConvGeom::new(1, 1, 0))
}

use crate::error::{Error, Result};
use crate::losses::{self, GanForm, LossReport, LossWeights, Regime, TermVars};
use crate::netzoo::Network;
use crate::phantom::PairedSample;
use crate::tensor::autograd::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

/// The networks a regime trains. `g_ab` maps images to masks, `g_ba` masks
/// to images; `d_forward` judges masks, `d_backward` images.
#[derive(Clone, Debug)]
pub struct Nets<T: Real = f32> {
    pub g_ab: Network<T>,
    pub g_ba: Option<Network<T>>,
    pub d_forward: Option<Network<T>>,
    pub d_backward: Option<Network<T>>,
}

impl<T: Real> Nets<T> {
    pub fn cast<U: Real>(&self) -> Nets<U> {
        Nets {
            g_ab: self.g_ab.cast(),
            g_ba: self.g_ba.as_ref().map(Network::cast),
            d_forward: self.d_forward.as_ref().map(Network::cast),
            d_backward: self.d_backward.as_ref().map(Network::cast),
        }
    }

    pub fn generators(&self) -> impl Iterator<Item = &Network<T>> {
        std::iter::once(&self.g_ab).chain(self.g_ba.as_ref())
    }

    pub fn discriminators(&self) -> impl Iterator<Item = &Network<T>> {
        self.d_forward.iter().chain(self.d_backward.as_ref())
    }

    pub fn generators_mut(&mut self) -> impl Iterator<Item = &mut Network<T>> {
        std::iter::once(&mut self.g_ab).chain(self.g_ba.as_mut())
    }

    pub fn discriminators_mut(&mut self) -> impl Iterator<Item = &mut Network<T>> {
        self.d_forward.iter_mut().chain(self.d_backward.as_mut())
    }

    fn require(&self, regime: Regime) -> Result<()> {
        let ok = (!regime.uses_backward() || (self.g_ba.is_some() && self.d_backward.is_some()))
            && (!regime.uses_forward_disc() || self.d_forward.is_some());
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "regime",
                format!("networks missing for regime {}", regime.as_str()),
            ))
        }
    }
}

/// Image and mask of a sample as `[1, 1, h, w]` tensors on the `[-1, 1]`
/// scale (mask 0 maps to -1, 1 to +1).
pub fn sample_tensors<T: Real>(s: &PairedSample) -> Result<(Tensor<T>, Tensor<T>)> {
    let (w, h) = (s.image.width(), s.image.height());
    let img = s.image.data().iter().map(|&v| T::from_f64c(v as f64)).collect();
    let mask = s
        .mask
        .data()
        .iter()
        .map(|&v| T::from_f64c(2.0 * v as f64 - 1.0))
        .collect();
    Ok((Tensor::from_grid(h, w, img)?, Tensor::from_grid(h, w, mask)?))
}

/// Result of one generator-objective evaluation.
pub struct GenPass<T> {
    pub report: LossReport,
    /// Forward-generator output on the image.
    pub fake_b: Tensor<T>,
    /// Backward-generator output on the mask (cycle regime only).
    pub fake_a: Option<Tensor<T>>,
    pub grads: Option<Gradients<T>>,
}

/// Evaluates the regime's generator objective; discriminators stay frozen.
pub fn generator_pass<T: Real>(
    nets: &Nets<T>,
    real_a: &Tensor<T>,
    real_b: &Tensor<T>,
    w: &LossWeights,
    regime: Regime,
    with_grads: bool,
) -> Result<GenPass<T>> {
    nets.require(regime)?;
    let form = w.gan_form;
    let mut tape = Tape::new();
    let a = tape.constant(real_a.clone());
    let b = tape.constant(real_b.clone());
    let mut terms = TermVars::default();

    let fake_b = nets.g_ab.forward_on(&mut tape, a, with_grads)?;
    terms.pix = Some(losses::pixelwise_on(&mut tape, fake_b, b)?);
    if let Some(d) = nets.d_forward.as_ref().filter(|_| regime.uses_forward_disc()) {
        let logits = d.forward_on(&mut tape, fake_b, false)?;
        let s = losses::scores_on(&mut tape, logits, form);
        terms.adv_forward = Some(losses::gen_adv_on(&mut tape, s, form)?);
    }
    let mut fake_a = None;
    if regime.uses_backward() {
        let (g_ba, d_bwd) = (nets.g_ba.as_ref().unwrap(), nets.d_backward.as_ref().unwrap());
        let rec_a = g_ba.forward_on(&mut tape, fake_b, with_grads)?;
        let fa = g_ba.forward_on(&mut tape, b, with_grads)?;
        let rec_b = nets.g_ab.forward_on(&mut tape, fa, with_grads)?;
        let logits = d_bwd.forward_on(&mut tape, fa, false)?;
        let s = losses::scores_on(&mut tape, logits, form);
        terms.adv_backward = Some(losses::gen_adv_on(&mut tape, s, form)?);
        let ca = losses::cycle_on(&mut tape, a, rec_a)?;
        let cb = losses::cycle_on(&mut tape, b, rec_b)?;
        terms.cyc = Some(tape.linear(&[(ca, 1.0), (cb, 1.0)])?);
        fake_a = Some(tape.value(fa).clone());
    }
    let (total, report) = losses::total_on(&mut tape, &terms, w, regime)?;
    if !report.total.is_finite() {
        return Err(Error::NumericFault {
            term: "total".into(),
            iteration: 0,
            value: report.total,
        });
    }
    let grads = if with_grads {
        let g = tape.backward(total)?;
        if !g.all_finite() {
            return Err(Error::NumericFault {
                term: "generator gradient".into(),
                iteration: 0,
                value: f64::NAN,
            });
        }
        Some(g)
    } else {
        None
    };
    Ok(GenPass {
        report,
        fake_b: tape.value(fake_b).clone(),
        fake_a,
        grads,
    })
}

fn judge<'a, T: Real>(
    tape: &mut Tape<'a, T>,
    d: &'a Network<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    form: GanForm,
    trainable: bool,
) -> Result<Var> {
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let lr = d.forward_on(tape, r, trainable)?;
    let lf = d.forward_on(tape, f, trainable)?;
    let sr = losses::scores_on(tape, lr, form);
    let sf = losses::scores_on(tape, lf, form);
    losses::disc_loss_on(tape, sr, sf, form)
}

/// Half the summed discriminator losses on real vs fake samples, with the
/// generators out of the graph.
pub fn discriminator_pass<T: Real>(
    nets: &Nets<T>,
    real_a: &Tensor<T>,
    real_b: &Tensor<T>,
    fake_a: Option<&Tensor<T>>,
    fake_b: &Tensor<T>,
    form: GanForm,
    with_grads: bool,
) -> Result<(f64, Option<Gradients<T>>)> {
    let mut tape = Tape::new();
    let mut parts = Vec::new();
    if let Some(d) = &nets.d_forward {
        parts.push((judge(&mut tape, d, real_b, fake_b, form, with_grads)?, 0.5));
    }
    if let (Some(d), Some(fa)) = (&nets.d_backward, fake_a) {
        parts.push((judge(&mut tape, d, real_a, fa, form, with_grads)?, 0.5));
    }
    if parts.is_empty() {
        return Ok((0.0, None));
    }
    let total = tape.linear(&parts)?;
    let value = tape.value(total).item().to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(Error::NumericFault {
            term: "discriminator".into(),
            iteration: 0,
            value,
        });
    }
    let grads = if with_grads {
        let g = tape.backward(total)?;
        if !g.all_finite() {
            return Err(Error::NumericFault {
                term: "discriminator gradient".into(),
                iteration: 0,
                value: f64::NAN,
            });
        }
        Some(g)
    } else {
        None
    };
    Ok((value, grads))
}

//! Adversarial, cycle-consistency and pixel-wise objectives.
//!
//! Each loss exists twice: as a plain function on grids, used for reporting
//! and tests, and as a builder on the autodiff [`Tape`] used in training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{GrayImage, SegMask};
use crate::tensor::autograd::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanForm {
    /// Binary cross-entropy on sigmoid scores.
    Log,
    #[default]
    LeastSquares,
}

/// Which objective terms a training run optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Cycle-consistent GAN with the forward pixel-wise term.
    #[default]
    Spcgan,
    /// Forward generator and discriminator only, plus the pixel-wise term.
    GanPix,
    /// Pixel-wise term only.
    Fcn,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Spcgan => "spcgan",
            Regime::GanPix => "gan_pix",
            Regime::Fcn => "fcn",
        }
    }

    pub fn uses_forward_disc(&self) -> bool {
        !matches!(self, Regime::Fcn)
    }

    pub fn uses_backward(&self) -> bool {
        matches!(self, Regime::Spcgan)
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spcgan" => Ok(Regime::Spcgan),
            "gan_pix" => Ok(Regime::GanPix),
            "fcn" => Ok(Regime::Fcn),
            other => Err(Error::validation("regime", format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_pix: f64,
    pub gan_form: GanForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_pix: 10.0,
            gan_form: GanForm::LeastSquares,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda_cyc", self.lambda_cyc), ("lambda_pix", self.lambda_pix)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted objective terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv_forward: f64,
    pub adv_backward: f64,
    pub cyc: f64,
    pub pix: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_forward: f64,
    pub adv_backward: f64,
    pub cyc: f64,
    pub pix: f64,
    pub total: f64,
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b} elements")));
    }
    Ok(())
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    it.sum::<f64>() / n as f64
}

fn check_shapes<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn log_scores<T: Real>(t: &Tensor<T>) -> Result<Vec<f64>> {
    t.data()
        .iter()
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err(Error::Domain(format!("log-form score {v} outside (0, 1)")))
            }
        })
        .collect()
}

/// Discriminator-side value. Log form: `mean ln d_real + mean ln(1 - d_fake)`
/// (maximized by D). Least squares: `mean (d_real - 1)^2 + mean d_fake^2`
/// (minimized by D).
pub fn adversarial_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>, form: GanForm) -> Result<f64> {
    check_shapes(d_real, d_fake, "adversarial_loss")?;
    let n = d_real.len();
    match form {
        GanForm::Log => {
            let (r, f) = (log_scores(d_real)?, log_scores(d_fake)?);
            Ok(mean(r.iter().map(|v| v.ln()), n) + mean(f.iter().map(|v| (-v).ln_1p()), n))
        }
        GanForm::LeastSquares => {
            let r = mean(d_real.data().iter().map(|v| (v.to_f64().unwrap() - 1.0).powi(2)), n);
            let f = mean(d_fake.data().iter().map(|v| v.to_f64().unwrap().powi(2)), n);
            Ok(r + f)
        }
    }
}

/// Generator-side value, minimized by G. Log form: `mean ln(1 - d_fake)`;
/// least squares: `mean (d_fake - 1)^2`.
pub fn generator_adversarial_loss<T: Real>(d_fake: &Tensor<T>, form: GanForm) -> Result<f64> {
    let n = d_fake.len();
    match form {
        GanForm::Log => Ok(mean(log_scores(d_fake)?.iter().map(|v| (-v).ln_1p()), n)),
        GanForm::LeastSquares => Ok(mean(
            d_fake.data().iter().map(|v| (v.to_f64().unwrap() - 1.0).powi(2)),
            n,
        )),
    }
}

/// Mean absolute per-pixel difference.
pub fn cycle_loss(original: &GrayImage, cycled: &GrayImage) -> Result<f64> {
    if (original.width(), original.height()) != (cycled.width(), cycled.height()) {
        return Err(Error::Shape(format!(
            "cycle_loss: {}x{} vs {}x{}",
            original.width(),
            original.height(),
            cycled.width(),
            cycled.height()
        )));
    }
    let (a, b) = (original.data(), cycled.data());
    Ok(mean(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()), a.len()))
}

/// Mean squared per-pixel difference between a `[0, 1]` prediction and the
/// reference mask.
pub fn pixelwise_loss(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Shape(format!(
            "pixelwise_loss: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    same_len(pred.data().len(), gt.data().len(), "pixelwise_loss")?;
    let (a, b) = (pred.data(), gt.data());
    Ok(mean(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)), a.len()))
}

/// Weighted total for `regime`. Terms the regime does not use are zeroed in
/// the report so that `total` is always the sum of what is shown.
pub fn total_objective(parts: &LossParts, w: &LossWeights, regime: Regime) -> Result<LossReport> {
    w.validate()?;
    let mut r = LossReport {
        adv_forward: parts.adv_forward,
        adv_backward: parts.adv_backward,
        cyc: parts.cyc,
        pix: parts.pix,
        total: 0.0,
    };
    if !regime.uses_forward_disc() {
        r.adv_forward = 0.0;
    }
    if !regime.uses_backward() {
        r.adv_backward = 0.0;
        r.cyc = 0.0;
    }
    for (term, v) in [
        ("adv_forward", r.adv_forward),
        ("adv_backward", r.adv_backward),
        ("cyc", r.cyc),
        ("pix", r.pix),
    ] {
        if !v.is_finite() {
            return Err(Error::NumericFault {
                term: term.into(),
                iteration: 0,
                value: v,
            });
        }
    }
    r.total = r.adv_forward + r.adv_backward + w.lambda_cyc * r.cyc + w.lambda_pix * r.pix;
    Ok(r)
}

/// Keeps sigmoid scores strictly inside (0, 1) so the logs stay finite in
/// single precision.
const SCORE_MARGIN: f64 = 1e-6;

/// Turns raw discriminator outputs into the scores the loss form expects.
pub fn scores_on<T: Real>(tape: &mut Tape<'_, T>, logits: Var, form: GanForm) -> Var {
    match form {
        GanForm::Log => {
            let s = tape.sigmoid(logits);
            tape.affine(s, 1.0 - 2.0 * SCORE_MARGIN, SCORE_MARGIN)
        }
        GanForm::LeastSquares => logits,
    }
}

/// Discriminator objective to minimize (the negated log form, or the least
/// squares form as is).
pub fn disc_loss_on<T: Real>(tape: &mut Tape<'_, T>, real: Var, fake: Var, form: GanForm) -> Result<Var> {
    match form {
        GanForm::Log => {
            let r = tape.mean_log(real)?;
            let f = tape.mean_log1m(fake)?;
            tape.linear(&[(r, -1.0), (f, -1.0)])
        }
        GanForm::LeastSquares => {
            let r = tape.mean_sq_to(real, 1.0);
            let f = tape.mean_sq_to(fake, 0.0);
            tape.linear(&[(r, 1.0), (f, 1.0)])
        }
    }
}

pub fn gen_adv_on<T: Real>(tape: &mut Tape<'_, T>, fake: Var, form: GanForm) -> Result<Var> {
    match form {
        GanForm::Log => tape.mean_log1m(fake),
        GanForm::LeastSquares => Ok(tape.mean_sq_to(fake, 1.0)),
    }
}

pub fn cycle_on<T: Real>(tape: &mut Tape<'_, T>, original: Var, cycled: Var) -> Result<Var> {
    tape.mean_abs_diff(original, cycled)
}

/// Pixel-wise MSE measured in `[0, 1]` mask units; `out` and `gt` are on the
/// internal `[-1, 1]` scale.
pub fn pixelwise_on<T: Real>(tape: &mut Tape<'_, T>, out: Var, gt: Var) -> Result<Var> {
    let p = tape.affine(out, 0.5, 0.5);
    let g = tape.affine(gt, 0.5, 0.5);
    tape.mean_sq_diff(p, g)
}

/// Scalar nodes of each term, `None` where the regime skips it.
#[derive(Clone, Copy, Debug, Default)]
pub struct TermVars {
    pub adv_forward: Option<Var>,
    pub adv_backward: Option<Var>,
    pub cyc: Option<Var>,
    pub pix: Option<Var>,
}

/// Builds the weighted total on the tape and the matching report.
pub fn total_on<T: Real>(
    tape: &mut Tape<'_, T>,
    terms: &TermVars,
    w: &LossWeights,
    regime: Regime,
) -> Result<(Var, LossReport)> {
    let get = |tape: &Tape<'_, T>, v: Option<Var>| {
        v.map(|v| tape.value(v).item().to_f64().unwrap_or(f64::NAN))
            .unwrap_or(0.0)
    };
    let parts = LossParts {
        adv_forward: get(tape, terms.adv_forward),
        adv_backward: get(tape, terms.adv_backward),
        cyc: get(tape, terms.cyc),
        pix: get(tape, terms.pix),
    };
    let report = total_objective(&parts, w, regime)?;
    let mut lin = Vec::new();
    if regime.uses_forward_disc() {
        lin.extend(terms.adv_forward.map(|v| (v, 1.0)));
    }
    if regime.uses_backward() {
        lin.extend(terms.adv_backward.map(|v| (v, 1.0)));
        lin.extend(terms.cyc.map(|v| (v, w.lambda_cyc)));
    }
    lin.extend(terms.pix.map(|v| (v, w.lambda_pix)));
    let total = tape.linear(&lin)?;
    Ok((total, report))
}

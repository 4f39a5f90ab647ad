use std::collections::BTreeMap;

use super::autograd::{Gradients, ParamKey};
use super::{Real, Tensor};

struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
    step: i32,
}

/// Adaptive-moment optimizer with bias correction. Each parameter keeps
/// its own step counter; parameters without a gradient are left untouched.
pub struct Adam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    state: BTreeMap<ParamKey, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1: T::from_f64c(beta1),
            beta2: T::from_f64c(beta2),
            eps: T::from_f64c(1e-8),
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step<'p>(
        &mut self,
        params: impl IntoIterator<Item = (ParamKey, &'p mut Tensor<T>)>,
        grads: &Gradients<T>,
        lr: f64,
    ) {
        let lr = T::from_f64c(lr);
        for (key, value) in params {
            let Some(g) = grads.param(key) else { continue };
            let st = self.state.entry(key).or_insert_with(|| Moments {
                m: Tensor::zeros(value.shape()),
                v: Tensor::zeros(value.shape()),
                step: 0,
            });
            st.step += 1;
            let (b1, b2) = (self.beta1, self.beta2);
            let bc1 = T::one() - b1.powi(st.step);
            let bc2 = T::one() - b2.powi(st.step);
            let step_size = lr / bc1;
            let bc2_sqrt = bc2.sqrt();
            let eps = self.eps;
            for (((p, &gi), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.data_mut())
                .zip(st.v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * gi;
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

use super::params::{Gradients, ParamStore};
use super::NumericError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter in `store`.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    config: &AdamConfig,
) -> Result<(), NumericError> {
    // Validate before mutating anything.
    for (_, name) in store.iter_ids() {
        if grads.get(name).is_none() {
            return Err(NumericError::MissingGradient(name.to_string()));
        }
    }
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let (lr, eps) = (T::lit(config.lr), T::lit(config.eps));
    let (step, slots) = store.adam_parts();
    *step += 1;
    let t = *step as i32;
    let bias1 = T::one() - b1.powi(t);
    let bias2 = T::one() - b2.powi(t);
    for slot in slots {
        let g = grads.get(slot.name).expect("checked above");
        if g.len() != slot.value.len() {
            return Err(NumericError::shape("adam_step", slot.value.shape(), g.shape()));
        }
        let values = slot.value.data_mut().iter_mut();
        let moments = slot.m.data_mut().iter_mut().zip(slot.v.data_mut().iter_mut());
        for ((w, &gv), (m, v)) in values.zip(g.data()).zip(moments) {
            *m = b1 * *m + (T::one() - b1) * gv;
            *v = b2 * *v + (T::one() - b2) * gv * gv;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

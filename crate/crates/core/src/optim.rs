use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::real::Real;

/// Adam with bias-corrected moments and a constant learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update of every parameter in `params`. Gradients are left in
    /// place; clear them with [`ParamStore::zero_grad`].
    pub fn step<T: Real>(&self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::State(format!("parameter {:?} has no gradient; run backward before stepping", p.name)));
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, lr, eps) = (T::one(), T::of(self.lr), T::of(self.eps));
        for p in params.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let grad = p.grad.as_ref().expect("checked above");
            let values = p.value.data_mut();
            let ms = p.adam_m.data_mut();
            let vs = p.adam_v.data_mut();
            for (((w, m), v), &g) in values.iter_mut().zip(ms).zip(vs).zip(grad.data()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

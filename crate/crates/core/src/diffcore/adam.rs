use super::tensor::Tensor2;
use super::{DiffError, ParamId, ParamStore};

/// Adam with bias-corrected moment estimates.
///
/// Moments are kept per parameter id; `step` consumes the gradients
/// accumulated in the store and zeroes them afterwards.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(ParamId, Tensor2, Tensor2)>,
}

impl Adam {
    pub fn new(lr: f64, params: &[ParamId], store: &ParamStore) -> Self {
        let moments = params
            .iter()
            .map(|&id| {
                let (r, c) = store.value(id).shape();
                (id, Tensor2::zeros(r, c), Tensor2::zeros(r, c))
            })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments,
        }
    }

    /// Applies one update to every managed parameter and clears its gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), DiffError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, m, v) in &mut self.moments {
            if let Some((index, value)) = store.grad(*id).first_non_finite() {
                return Err(DiffError::NonFiniteGradient {
                    param: store.name(*id).to_string(),
                    index,
                    value,
                });
            }
            {
                let g = store.grad(*id).data();
                for ((mi, vi), &gi) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g) {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                }
            }
            let value = store.value_mut(*id).data_mut();
            for ((pi, &mi), &vi) in value.iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            store.grad_mut(*id).fill(0.0);
        }
        Ok(())
    }
}

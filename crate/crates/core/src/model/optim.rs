use std::collections::BTreeMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: T::lit(lr),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Starts a new optimizer step; call once before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) {
        debug_assert!(self.step > 0, "begin_step not called");
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); grad.numel()], vec![T::zero(); grad.numel()]));
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.step);
        let bc2 = one - self.beta2.powi(self.step);
        for ((p, &g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = self.beta1 * *mi + (one - self.beta1) * g;
            *vi = self.beta2 * *vi + (one - self.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

//! Parameter updates: plain gradient descent and the bias-corrected adaptive rule.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(TensorError::InvalidLearningRate(lr));
        }
        Ok(Self { kind, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0 })
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every trainable parameter; frozen ones are not touched.
    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>) {
        self.steps += 1;
        let lr = F::of(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (_, p) in store.iter_mut().filter(|(_, p)| p.trainable) {
                    for (w, &g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
                let c1 = F::of(1.0 - self.beta1.powi(self.steps as i32));
                let c2 = F::of(1.0 - self.beta2.powi(self.steps as i32));
                let eps = F::of(self.eps);
                let one = F::one();
                for (_, p) in store.iter_mut().filter(|(_, p)| p.trainable) {
                    let n = p.grad.len();
                    let (m, v) = p.moments.get_or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
                    for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

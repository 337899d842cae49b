//! Stochastic gradient descent with momentum and L2 weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `v ← μ·v + (g + λ·p)`, `p ← p − η·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr: T::from_f64(lr),
            momentum: T::from_f64(momentum),
            weight_decay: T::from_f64(weight_decay),
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Applies one update to every parameter using its stored gradient.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::ZERO; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(contract_err!(
                "optimizer tracks {} parameters, step received {}",
                self.velocity.len(),
                params.len()
            ));
        }
        for (i, (p, v)) in params.into_iter().zip(&mut self.velocity).enumerate() {
            let (data, grad) = p.data_and_grad_mut();
            let grad = grad.ok_or_else(|| contract_err!("parameter {i} has no gradient"))?;
            if v.len() != data.len() {
                return Err(contract_err!("parameter {i} changed size"));
            }
            for ((w, &g), vel) in data.iter_mut().zip(grad).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + (g + self.weight_decay * *w);
                *w -= self.lr * *vel;
            }
        }
        Ok(())
    }
}

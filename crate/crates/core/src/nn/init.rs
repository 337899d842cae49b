use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seeded weight initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// He-normal: N(0, 2 / fan_in).
    pub fn he_normal<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
        Tensor::from_fn(shape, |_| T::from_f64(self.normal() * std)).requiring_grad()
    }

    /// Normal with the given std, redrawn outside ±2σ.
    pub fn truncated_normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| loop {
            let v = self.normal();
            if v.abs() <= 2.0 {
                break T::from_f64(v * std);
            }
        })
        .requiring_grad()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}

pub(crate) fn zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).requiring_grad()
}

pub(crate) fn ones<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::full(shape, T::ONE).requiring_grad()
}

use crate::error::Result;
use crate::nn::init::{ones, zeros, Initializer};
use crate::nn::parameters;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Affine map `x·W + b`, `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}
parameters!(Linear { weight, bias });

impl<T: Scalar> Linear<T> {
    pub fn new(init: &mut Initializer, input: usize, output: usize) -> Self {
        Self {
            weight: init.he_normal(&[input, output], input),
            bias: zeros(&[output]),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}
parameters!(LayerNorm { gain, bias });

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self {
            gain: ones(&[d]),
            bias: zeros(&[d]),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let g = tape.param(&self.gain);
        let b = tape.param(&self.bias);
        tape.layer_norm(x, g, b, T::from_f64(NORM_EPS))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub groups: usize,
}
parameters!(GroupNorm { gain, bias });

/// Largest divisor of `channels` not exceeding `max_groups`.
pub(crate) fn group_count(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(channels).max(1))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(channels: usize, max_groups: usize) -> Self {
        Self {
            gain: ones(&[channels]),
            bias: zeros(&[channels]),
            groups: group_count(channels, max_groups),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let g = tape.param(&self.gain);
        let b = tape.param(&self.bias);
        tape.group_norm(x, self.groups, g, b, T::from_f64(NORM_EPS))
    }
}

/// Square-kernel convolution, optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}
parameters!(Conv { weight, bias });

impl<T: Scalar> Conv<T> {
    pub fn new(
        init: &mut Initializer,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
    ) -> Self {
        Self {
            weight: init.he_normal(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel),
            bias: with_bias.then(|| zeros(&[c_out])),
            stride,
            padding: kernel / 2,
        }
    }

    /// Same geometry with all-zero weights.
    pub fn zeroed(mut self) -> Self {
        self.weight.data_mut().fill(T::ZERO);
        self
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_count_divides_channels() {
        assert_eq!(group_count(16, 8), 8);
        assert_eq!(group_count(12, 8), 6);
        assert_eq!(group_count(3, 8), 3);
        assert_eq!(group_count(7, 4), 1);
    }
}

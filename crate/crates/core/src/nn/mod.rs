//! TransUNet building blocks. Every module borrows its parameters into a
//! [`Tape`](crate::Tape) during `forward`, so gradients land on the tape and
//! are gathered back by name through [`Parameters`].

mod config;
pub mod decoder;
pub mod encoder;
mod init;
mod layers;
mod model;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use config::{default_decoder_widths, preset_decoder_widths, DecoderKind, EncoderKind, ModelConfig, ScalePreset, Variant, BACKBONE_STRIDE};
pub use decoder::{CupBlock, Decoder};
pub use encoder::{sequentialize, unsequentialize, Backbone, Encoded, Encoder, PatchEmbedding, Projection, ResidualBlock, TransformerLayer};
pub use init::Initializer;
pub use layers::{Conv, GroupNorm, LayerNorm, Linear};
pub use model::TransUnet;

/// Named, ordered access to trainable tensors.
pub trait Parameters<T: Scalar> {
    fn visit<'s>(&'s self, prefix: &str, out: &mut Vec<(String, &'s Tensor<T>)>);
    fn visit_mut<'s>(&'s mut self, prefix: &str, out: &mut Vec<(String, &'s mut Tensor<T>)>);

    fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn named_parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out
    }

    fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Parameters<T> for Tensor<T> {
    fn visit<'s>(&'s self, prefix: &str, out: &mut Vec<(String, &'s Tensor<T>)>) {
        out.push((prefix.to_string(), self));
    }
    fn visit_mut<'s>(&'s mut self, prefix: &str, out: &mut Vec<(String, &'s mut Tensor<T>)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: Scalar, P: Parameters<T>> Parameters<T> for Option<P> {
    fn visit<'s>(&'s self, prefix: &str, out: &mut Vec<(String, &'s Tensor<T>)>) {
        if let Some(p) = self {
            p.visit(prefix, out);
        }
    }
    fn visit_mut<'s>(&'s mut self, prefix: &str, out: &mut Vec<(String, &'s mut Tensor<T>)>) {
        if let Some(p) = self {
            p.visit_mut(prefix, out);
        }
    }
}

impl<T: Scalar, P: Parameters<T>> Parameters<T> for Vec<P> {
    fn visit<'s>(&'s self, prefix: &str, out: &mut Vec<(String, &'s Tensor<T>)>) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), out);
        }
    }
    fn visit_mut<'s>(&'s mut self, prefix: &str, out: &mut Vec<(String, &'s mut Tensor<T>)>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`Parameters`] for a struct by visiting the listed fields in order.
macro_rules! parameters {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: $crate::Scalar> $crate::nn::Parameters<T> for $ty<T> {
            fn visit<'s>(
                &'s self,
                prefix: &str,
                out: &mut alloc::vec::Vec<(alloc::string::String, &'s $crate::Tensor<T>)>,
            ) {
                $( $crate::nn::Parameters::visit(&self.$field, &$crate::nn::join(prefix, stringify!($field)), out); )*
            }
            fn visit_mut<'s>(
                &'s mut self,
                prefix: &str,
                out: &mut alloc::vec::Vec<(alloc::string::String, &'s mut $crate::Tensor<T>)>,
            ) {
                $( $crate::nn::Parameters::visit_mut(&mut self.$field, &$crate::nn::join(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use parameters;

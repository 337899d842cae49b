//! Dependency-light TransUNet: a reverse-mode tensor engine, pure-ViT and
//! hybrid CNN-Transformer encoders, naive and cascaded-upsampler decoders,
//! segmentation losses, volumetric metrics, phantom data and the training
//! loop. `no_std` + `alloc`; file formats and the CLI live in the `transunet`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod train;
mod tensor;
pub mod verify;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::{ElementType, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use volume::{IntensityVolume, LabelVolume, Spacing, Volume};

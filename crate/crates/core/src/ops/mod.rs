//! Differentiable primitives. Each submodule adds forward methods to
//! [`Tape`](crate::Tape) and supplies the matching backward rule.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod norm;
pub(crate) mod reduce;
pub(crate) mod resize;
pub(crate) mod shape;

pub use conv::ConvGeometry;
pub use resize::{bilinear_sample_coord, ResizeGeometry};

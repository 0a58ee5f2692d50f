//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

pub mod gradcheck;
pub mod ops;
pub mod suite;
mod tape;

pub use ops::conv::{conv3d_direct, conv_output_extent, Conv3dParams};
pub use ops::loss::softmax_rows;
pub use ops::pointwise::sigmoid_scalar;
pub use ops::pool::pooled_extents;
pub use tape::{OpKind, Tape, Var};

//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! Every operation produces a new immutable [`Tensor`] that remembers its
//! parents and a backward closure. Calling [`Tensor::backward`] on a scalar
//! walks the graph in reverse creation order and accumulates gradients into
//! the trainable leaves created with [`Tensor::param`].

pub mod gradcheck;
mod ops;
mod real;
mod tensor;

pub use ops::{sigmoid, Conv2dSpec};
pub use real::{gemm, Real};
pub use tensor::{BackwardCtx, ParentGrads, Tensor};

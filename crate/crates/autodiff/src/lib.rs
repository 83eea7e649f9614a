//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Images are stored channel-last (`[H, W, C]`), batch size one. Every op is a
//! method on [`Graph`] that records its value and a backward closure; custom
//! differentiable kernels can be registered with [`Graph::custom`].

pub mod check;
mod gemm;
mod graph;
mod ops;
mod tensor;

pub use gemm::gemm;
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::elementwise::{broadcast_shape, gelu, sigmoid};
pub use tensor::Tensor;

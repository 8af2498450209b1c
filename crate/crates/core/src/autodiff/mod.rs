//! Dense row-major tensors with a define-by-run reverse-mode tape.
//!
//! Every forward pass records onto a fresh [`Graph`]; values are 2-D with the
//! batch in the row dimension. Parameters enter the tape as leaves marked
//! `requires_grad`, and [`Graph::backward`] accumulates into per-node gradient
//! slots until [`Graph::zero_grad`] clears them.

mod check;
mod graph;
mod tensor;

pub use check::grad_check;
pub use graph::{Graph, Var};
pub use tensor::Tensor;

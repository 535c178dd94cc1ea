//! Dense tensors and reverse-mode differentiation.

pub mod autodiff;
pub mod tensor;

pub use autodiff::{Eager, Gradients, Ops, Tape, VarId};
pub use tensor::Tensor;

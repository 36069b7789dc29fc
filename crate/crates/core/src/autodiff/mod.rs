//! Dense `f64` tensors and a reverse-mode tape covering the operations the
//! network, the contrastive estimators and the losses need.

mod dft;
mod tape;
mod tensor;

pub use tape::{symmetric_eigen, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

//! Dense tensors and the reverse-mode tape every other module builds on.

mod dense;
pub mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;

pub use dense::Tensor;
pub use scalar::Scalar;
pub use tape::{BackwardRule, Tape, Var};

#[cfg(test)]
mod tests;

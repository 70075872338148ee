//! Dense tensors, reverse-mode autodiff and the AdamW optimizer.

mod adamw;
mod params;
mod scalar;
mod tape;
mod tensor;

pub mod gradcheck;

pub use adamw::{AdamWConfig, AdamWState};
pub use params::{uniform, uniform_fan_in, Bindings, ParamStore};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) use tape::sigmoid;

#[cfg(test)]
mod tests;

//! Dense tensors with reverse-mode differentiation.
//!
//! Values live in [`Tensor`]s; a [`Tape`] records operations applied to them
//! through [`Var`] handles and replays the chain rule in [`Tape::backward`].

pub mod init;
pub mod kernels;
mod ops;
mod real;
mod rng;
pub mod runtime;
mod tape;
mod tensor;

pub use ops::{sigmoid, softplus};
pub use real::{exp_f32, DType, Real};
pub use rng::RngState;
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::{numel, Tensor};

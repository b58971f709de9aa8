//! Dense tensors, a parameter store with Adam, and tape-based reverse-mode
//! differentiation.

pub mod gradcheck;
pub mod ops;
pub mod store;
pub mod tape;
pub mod tensor;

pub use ops::{gru_cell, linear, GruNames};
pub use store::{AdamConfig, MomentState, ParamEntry, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

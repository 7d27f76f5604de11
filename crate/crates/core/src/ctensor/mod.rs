//! Complex tensors and split-real reverse-mode differentiation.

pub mod checkpoint;
mod complex;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{Param, ParamId, ParamKind, ParamStore, Session};
pub use tape::{CVar, Gradients, Tape, Var, MAGNITUDE_GRAD_FLOOR};
pub use tensor::ComplexTensor;

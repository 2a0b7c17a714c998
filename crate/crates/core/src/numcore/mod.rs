//! Dense tensors and tape-based reverse-mode differentiation.

mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use params::{GradBuffer, ParamId, ParamStore, Parameter};
pub use tape::{attention_core_flops, flops, Gradients, Tape, Var};
pub use tensor::Tensor;

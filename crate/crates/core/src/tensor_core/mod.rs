//! Dense tensors, reverse-mode differentiation, Adam, gradient checking and
//! the checkpoint container.

mod adam;
pub mod checkpoint;
mod gemm;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{gradcheck, GradcheckReport, ParamCheck};
pub use tape::{gelu, gelu_grad, sigmoid, Tape, Var};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};

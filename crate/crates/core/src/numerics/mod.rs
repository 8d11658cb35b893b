//! Dense tensors, reverse-mode differentiation, Adam and a finite-difference
//! gradient oracle.

mod adam;
pub mod functions;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{concat, BinaryOp, FusedOp, Graph, UnaryOp, Var};
pub use tensor::Tensor;

mod params;
pub use params::{uniform_fan_in, Bound, ParamId, ParamStore};

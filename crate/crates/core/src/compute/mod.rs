//! Dense tensors, reverse-mode differentiation, Adam and a gradient oracle.

mod adam;
mod gradcheck;
pub mod kernels;
mod param;
pub mod probe;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{backward, gelu, Tape, Var};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout the models.
pub const LAYER_NORM_EPS: f64 = 1e-5;

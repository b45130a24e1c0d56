//! Dense-tensor reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]; gradients flow back in a single reverse sweep.
//! Training uses `f32`, gradient checks use `f64`.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, REL_ERROR_FLOOR};
pub use params::{truncated_normal, Param, ParamId, ParamStore};
pub use tape::{Tape, Var, LAYER_NORM_EPS, NORMALIZE_EPS};
pub use tensor::{DType, Real, Tensor};

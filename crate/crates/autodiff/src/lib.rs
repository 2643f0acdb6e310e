//! Reverse-mode automatic differentiation over dense `f64` matrices, with Adam.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Reduce, Tape, Var, EXP_CEIL, LOG_FLOOR};
pub use tensor::Tensor;

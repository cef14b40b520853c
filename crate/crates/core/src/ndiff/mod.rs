//! Dense double-precision arrays with reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

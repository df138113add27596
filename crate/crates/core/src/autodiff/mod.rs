//! Minimal reverse-mode differentiation used to train the model heads.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check_fn, GradCheckReport, RELATIVE_FLOOR};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var, PROB_EPSILON};
pub(crate) use tape::softmax_in_place;

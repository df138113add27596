#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_io;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod signal;
pub mod text;

pub use error::{Error, Result};

// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod functionals;
pub mod harness;
pub mod kernel;
pub mod measures;
pub mod numeric;

pub use error::{Error, Result};

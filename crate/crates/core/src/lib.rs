#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
pub mod coefficients;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod penalized;
pub mod quasilinear;
pub mod reference;

pub use error::{Error, Result};

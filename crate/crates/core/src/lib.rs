//! CATE estimation with representation learning and a cross-group
//! conditional-distribution discrepancy penalty.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod evalx;
pub mod gradcore;
pub mod linalg;
pub mod matdiv;
pub mod nets;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

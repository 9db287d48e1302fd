// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithm;
pub mod conic;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod one_stage;
pub mod oracle;
pub mod policy;
pub mod problem;
pub mod qfunction;

pub use error::{Error, Result};

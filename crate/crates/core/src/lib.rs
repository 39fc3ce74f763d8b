//! Joint RGB + thermal radiance fields.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0)` also rejects NaN

pub mod autodiff;
pub mod dataset;
pub mod encodings;
pub mod error;
pub mod field;
pub mod losses;
pub mod metrics;
pub mod real;
pub mod rendering;
pub mod trainer;

pub use error::{Error, Result};

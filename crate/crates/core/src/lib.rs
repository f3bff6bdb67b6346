// `!(x > 0.0)` style comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brdf;
pub mod envlight;
pub mod error;
pub mod fixtures;
pub mod oracle;
pub mod pfm;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod serve;
pub mod sh;
pub mod tracer;
pub mod transfer;
pub mod validate;

pub use error::{Error, Result};

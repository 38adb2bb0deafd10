//! Active efficient coding for a binocular agent: rendering, autoencoder
//! perception, intrinsically rewarded vergence and pursuit
//! control, asynchronous training and evaluation.

// `!(x > 0.0)` style checks are how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod environment;
pub mod evaluation;
pub mod error;
pub mod numerics;
pub mod perception;
pub mod stimulus;
pub mod training;

pub use error::{Error, Result};

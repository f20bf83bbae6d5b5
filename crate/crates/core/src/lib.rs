//! Direct affine registration of fetoscopic frames or vessel probability
//! maps, mosaicking, and windowed drift evaluation without ground truth.
//!
//! The pipeline runs [`register::register_pair`] on consecutive frames,
//! chains the results with [`mosaic::chain_transforms`], blends with
//! [`mosaic::blend`] and scores drift with [`drifteval::evaluate_drift`].
//! [`synth`] generates sequences with exact ground-truth motion.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod drifteval;
pub mod error;
pub mod imagecore;
pub mod metrics;
pub mod mosaic;
pub mod pipeline;
pub mod register;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};

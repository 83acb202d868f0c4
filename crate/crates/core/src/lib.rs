//! Respiratory-failure early warning toolkit.
//!
//! The crate is organised as a pipeline over ICU stays sampled on a regular
//! grid:
//!
//! * [`cohort`] loads, generates, resamples and splits stays.
//! * [`oxy`] estimates PaO2 from oxygen saturation (parametric curve and
//!   small feedforward networks).
//! * [`pf`] builds continuous FiO2, PaO2 and P/F tracks.
//! * [`labeler`] turns the P/F track into failure events and prediction labels.
//! * [`features`] extracts the per-time-point feature matrix.
//! * [`gbdt`] trains the boosted-tree score model and the clinical baselines.
//! * [`alarm`] evaluates score series with alarm silencing.
//! * [`pipeline`] ties the stages together per split.

// `!(x >= 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alarm;
pub mod artifacts;
pub mod cohort;
pub mod error;
pub mod features;
pub mod gbdt;
pub mod labeler;
pub mod metrics;
pub mod oxy;
pub mod pf;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod variables;

pub use error::{EwsError, Result};

/// Seconds since ICU admission.
pub type Seconds = i64;

pub const MINUTE: Seconds = 60;
pub const HOUR: Seconds = 3600;

/// Default resampling grid step (5 minutes).
pub const DEFAULT_GRID_STEP: Seconds = 5 * MINUTE;

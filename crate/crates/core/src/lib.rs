//! Price suggestion for second-hand items.
//!
//! A qualification classifier decides whether an item's image and
//! description carry enough signal for a price; a regressor suggests a log
//! price that should fall into a target range around the realized outcome.
//! The two are trained jointly, with the classifier's confidence weighting
//! the regressor's range loss under a percentile or loss-threshold
//! constraint.

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};

//! Stochastic unravelings of trace-nonpreserving master equations.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod divisibility;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod linops;
pub mod model;
pub mod stats;
pub mod unravel;

pub use error::{Error, Result};

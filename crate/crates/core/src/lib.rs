//! Space-time random scale mixtures for extremes: simulation, tail-dependence
//! summaries, peaks-over-threshold margins and a neural estimator of the
//! dependence parameters.

pub mod cli;
pub mod copula;
pub mod error;
pub mod estimator;
pub mod fields;
pub mod kernels;
pub mod marginal;
pub mod nn;
pub mod panel;
pub mod rng;
pub mod stats;
pub mod tail;
pub mod workbench;

pub use error::{Error, Result};

//! Regression Monte Carlo for finite-horizon stochastic impulse control.
//!
//! The solver builds a stack of fitted continuation surrogates by backward
//! induction over simulated training designs; the policy module turns that
//! stack into feedback decisions and forward value estimates.

pub mod config;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod intervention;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod solver;
pub mod stackfile;
pub mod surrogate;

pub use error::{Error, Result};

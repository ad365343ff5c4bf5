//! Random-tip-growth (RTG) tangle process, its delay-differential fluid limit,
//! and an experiment harness comparing the two.
//!
//! Module map:
//!
//! * [`tangle`] exact simulation of the tip-count process `(W_n, X_n, L_n, U_n)`.
//! * [`fluid`] method-of-steps solver for the fluid system
//!   `a' = 1 - 2a/b`, `b' = 1 - 2a(t-h)/b(t-h)`.
//! * [`coupling`] maps a fluid initial condition to discrete initial data and
//!   rescales traces to `(A, B)`.
//! * [`analysis`] deviation sweeps over the arrival rate and the exponential
//!   relaxation check for the fluid solution.
//! * [`config`] and [`app`] drive everything from a key-value config file.

// `!(x >= y)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod app;
pub mod config;
pub mod coupling;
mod error;
pub mod fluid;
pub mod rng;
pub mod tangle;

pub use error::{Error, Result};

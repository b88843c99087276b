//! Dynamic network quantile regression.
//!
//! Simulation of network panels with random coefficients, a check-loss
//! quantile-regression solver, the instrumental-variable quantile regression
//! estimator with network instruments, its sandwich covariance, and the pure
//! parts of the Monte Carlo harness. The crate is `no_std` and needs only
//! `alloc`; file formats, the CLI and the parallel runner live in the
//! `netquant` crate.

#![no_std]
// `!(x > 0.0)` guards deliberately reject NaN; index loops walk parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod distributions;
pub mod error;
pub mod inference;
pub mod ivqr;
pub mod mc;
pub mod network;
pub mod qr;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

//! File formats, the parallel Monte Carlo runner and the `netquant` command
//! line on top of `netquant-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod panel_io;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
pub use netquant_core as core;

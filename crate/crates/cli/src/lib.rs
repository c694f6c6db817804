//! Library side of the `pepr` command: configuration and pipeline stages.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;

pub use config::{Overrides, RunConfig};
pub use pipeline::{evaluate, exit_code, precompute, report, run, train, Layout};

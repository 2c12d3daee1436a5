//! Harness around `kadapt-core`: dataset ingestion, the synthetic
//! domain-shift benchmark, checkpoints and delimited formats, evaluation
//! pipelines with protocol instrumentation, SVG plots and the `kadapt`
//! command line.

// Same numeric-code conventions as the core crate: NaN-rejecting negated
// comparisons and indexed loops over flat buffers.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod imageio;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod synth;

pub use error::{HarnessError, Result};

//! Command-line experiment runner for hash-routed networks.
//!
//! * `train <config>` runs a task sequence from a TOML file and writes
//!   metrics, a trace log and a checkpoint.
//! * `eval <ckpt> <data> <head>` scores one task head on an IDX dataset.
//! * `inspect <trace-log>` turns a trace log into usage ratios and
//!   residue-norm histograms.

pub mod config;
mod error;
pub mod eval;
pub mod inspect;
pub mod train;

pub use error::CliError;

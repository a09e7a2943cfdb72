//! Configuration-driven front end for `porostab-core`: configuration
//! parsing, the `simulate`, `analyze` and `sweep` commands, and their output
//! files.

// `!(x >= 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_str, RunConfig};
pub use run::{run, Command, RunSummary};

//! Command-line front end: subcommands for each stage and a one-shot pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod error;
pub mod pipeline;
pub mod render;

pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineSummary};

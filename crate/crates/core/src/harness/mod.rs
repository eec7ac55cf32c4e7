//! Configuration, file plumbing and the stage-per-command pipeline behind
//! the `edgemac` binary.

mod config;
mod pipeline;

pub use config::{parse_config, NetworkSection, RunConfig, SearchSection};
pub use pipeline::{evaluate_rankings, run_pipeline, Command, ExtractMode};

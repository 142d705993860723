//! Pipeline commands behind the `pirhdy` binary.

pub mod commands;
pub mod config;

pub use commands::Outcome;
pub use config::PipelineConfig;

//! File formats, configuration and commands of the `eend` tool.
//!
//! The numerical work lives in `eend-core`; this crate reads and writes
//! WAV, RTTM, checkpoints, feature files and reports, and wires the stages
//! together.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod featcache;
pub mod report;
pub mod rttm;
pub mod wav;

pub use config::RunConfig;
pub use error::{CliError, Result};

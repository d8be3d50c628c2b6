//! Command implementations behind the `triage` binary.

pub mod bench;
pub mod config;
pub mod eval;
pub mod output;
pub mod pipeline;
pub mod stages;

use std::fmt;

pub use config::{Captioner, PipelineConfig, RankerChoice, TaggerChoice};
pub use pipeline::{run_pipeline, PipelineSummary};

/// An error caused by how the command was invoked rather than by the data.
/// The binary maps it to exit status 2.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(message: impl Into<String>) -> Self {
        Self(message.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

//! Plumbing behind the `coagents` binary: resolved run configurations,
//! manifests, the command implementations and report aggregation.

pub mod args;
pub mod config;
pub mod error;
pub mod parallel;
pub mod report;
pub mod run;
pub mod source;
pub mod stats;

pub use config::{RunConfig, RunManifest};
pub use error::{CliError, Result};
pub use run::{execute, rerun};

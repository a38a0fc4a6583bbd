//! End-to-end experiment pipeline: configuration, execution, reporting.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod trace;

pub use config::ExperimentConfig;
pub use pipeline::{run_experiment, ConditionArtifacts, OutputFormat};
pub use report::BoundReport;

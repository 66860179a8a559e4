//! Scenario configuration, experiment sweeps and the end-to-end pipeline for
//! reputation-aware VT migration.

pub mod config;
pub mod decay;
pub mod error;
pub mod experiments;
pub mod pipeline;
pub mod result;
pub mod scenario;

pub use config::ScenarioConfig;
pub use error::HarnessError;
pub use experiments::{run_experiment, run_named, Experiment};
pub use pipeline::{run_pipeline, PipelineReport, PipelineStatus};
pub use result::{Cell, ExperimentResult, ExperimentRun};

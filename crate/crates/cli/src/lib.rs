//! Experiment orchestration for `rcm-core`: configs, parallel runs,
//! manifests and reports.

pub mod config;
pub mod manifest;
pub mod report;
pub mod run;

pub use config::{parse_law, ExperimentConfig, ExperimentKind, ValidationError};
pub use manifest::{reproduce, RunManifest};
pub use report::{emit_report, Report};
pub use run::run_experiment;

//! Experiment driver: plan files, the run loop and report writers behind the
//! `dsa` binary.

pub mod plan;
pub mod report;
pub mod runner;

pub use plan::{parse_config, ExperimentPlan, HyperConfig, PolicyKind, Scenario};
pub use report::{emit_report, write_manifest, Format};
pub use runner::{run_experiment, RunRecord};

//! Experiment orchestration: configuration, per-run artifacts, stepsize
//! sweeps, the two-stage campaign pipeline, and report generation.

pub mod campaign;
pub mod config;
pub mod report;
pub mod run;
pub mod sweep;

pub use campaign::{run_campaign, worker_count, CampaignContext, CampaignOutcome};
pub use config::{ExperimentConfig, SpecEntry, TaskSelection};
pub use run::{RepSource, RunStamp};

use crate::agent::TrainingTrace;

/// Area under the learning curve: the sum of the checkpoint returns.
pub fn auc(trace: &TrainingTrace) -> f64 {
    trace.auc()
}

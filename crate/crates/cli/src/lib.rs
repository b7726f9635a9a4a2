//! Command-line pipeline: simulate or ingest a cohort, split patients, fit
//! and freeze the population model on the training side, then detect,
//! infer and evaluate on the held-out side.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_build_dict, cmd_detect, cmd_evaluate, cmd_fit_params, cmd_infer, cmd_pipeline,
    cmd_simulate, cmd_split, DetectCohort, EvalSummary, PipelineArgs, SimulateArgs,
};
pub use config::PipelineConfig;
pub use error::CliError;

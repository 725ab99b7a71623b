//! Experiment configuration, the active-learning loop, aggregation,
//! self-checks and the command-line interface.

pub mod cli;
pub mod config;
pub mod report;
pub mod run;
pub mod verify;

pub use cli::cli_main;
pub use config::{ExperimentConfig, ModelConfig};
pub use report::{aggregate, final_table, summarize, CurveRow, FinalRow};
pub use run::{evaluate_nll, run_experiment, RoundRecord, RunRecord};
pub use verify::SuiteReport;

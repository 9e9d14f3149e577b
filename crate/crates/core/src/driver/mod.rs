//! Orchestration: the search loop, the correlation experiments, and report
//! emission.

pub mod config;
pub mod lab;
pub mod report;
pub mod search;

pub use lab::{
    derive_seed, run_budget_sweep, run_diversity_experiment, run_policy_experiment, sweep_csv, Lab, SweepRow,
};
pub use config::SearchConfig;
pub use search::{resume_search, run_search, ExperimentRecord, IterationRecord, SearchOutcome};

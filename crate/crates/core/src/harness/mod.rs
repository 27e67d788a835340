//! Experiment configuration, Monte-Carlo execution, metrics and output files.

pub mod config;
pub mod metrics;
pub mod output;
pub mod run;
pub mod scenarios;

pub use config::{ExperimentConfig, FilterKind, Overrides};
pub use metrics::{compute_mse, detect_divergence_and_swaps, TrackOutcome};
pub use run::{run_monte_carlo, run_single, MetricsReport, RunResult};

//! Experiment runner: config files, the data pipeline, metrics and
//! manifests, sweeps and replay.

mod config;
mod run;

pub use config::{parse_strategy, DatasetSource, ExperimentConfig, Overrides};
pub use run::{
    mlp_config, prepare_data, read_metrics, replay, run_centralized_baseline, run_experiment,
    run_experiment_with_threads, strategy_grid, summarize, sweep, threads_from_env, Manifest,
    MetricsRow, PreparedData, RunMode, SweepEntry, MANIFEST_FILE, METRICS_FILE, METRICS_HEADER,
    SUMMARY_FILE, THREADS_ENV,
};

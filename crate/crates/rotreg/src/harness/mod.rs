//! Experiment orchestration: configuration, the training loop with its
//! trackers, seed sweeps, ablation grids, and the CLI.

pub mod cli;
pub mod config;
pub mod record;
pub mod sweep;
pub mod trainer;

pub use config::{default_gamma, default_lambda, ExperimentConfig, Method, TaskKind};
pub use record::{EpochRecord, HeadSpread, ResolvedConfig, RunRecord};
pub use sweep::{mean_std, run_ablation, run_seed_sweep, AblationParam, MetricSummary, SweepSummary};
pub use trainer::{
    build_dataset, report_mt_head_spread, run_experiment, sub_seed, track_theta_drift,
    track_z_updates,
};

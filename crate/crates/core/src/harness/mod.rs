//! Experiment orchestration: evaluation, run records, checkpoints, configs
//! and sweeps.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod records;
pub mod sweep;

pub use checkpoint::{load_checkpoint, save_checkpoint, Artifact};
pub use config::{ExperimentConfig, Method, Perturbation};
pub use evaluate::{evaluate_coprocessor, evaluate_policy, run_episode, EpisodeStats, EvalProtocol};
pub use records::{read_csv, write_csv, RunRecord, CSV_HEADER};
pub use sweep::{cells, run_cell, run_sweep, run_sweep_with, Cell, SweepInputs, SweepSummary};

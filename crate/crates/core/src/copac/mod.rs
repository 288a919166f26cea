//! Coprocessor actor-critic: learn a brain model from online experience,
//! choose stimulations whose predicted world actions the critic values most,
//! and recalibrate the critic to actions the brain can actually realize.

mod model;
mod recalib;
mod run;
mod select;

pub use model::{fit_brain_model, ActionPredictor, BrainModel, Experience, FnPredictor, OnlineBuffer};
pub use recalib::{realizable_targets, recalibrate_q, simulate_rollouts, RecalibReport};
pub use run::{run_copac, run_inverse_baseline, CopacRun, InverseBrainModel};
pub use select::{add_exploration_noise, sample_candidates, score_candidates, select_stimulation, Selection};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::FitOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopacConfig {
    pub episodes: usize,
    /// Uniform stimulation samples per argmax.
    pub candidates: usize,
    /// Exploration noise as a fraction of the stimulation half-range,
    /// decayed linearly from start to end over the episodes.
    pub explore_sigma_start: f64,
    pub explore_sigma_end: f64,
    /// Simulated episodes per recalibration.
    pub recalib_rollouts: usize,
    /// Maximum TD updates per recalibration.
    pub recalib_updates: usize,
    /// Stop recalibrating once mean |TD residual| falls below this.
    pub convergence_tol: f64,
    pub recalib_batch: usize,
    /// Candidates for the max in each recalibration target.
    pub target_candidates: usize,
    pub recalib_lr: f64,
    pub recalib_tau: f64,
    pub fit_epochs: usize,
    pub fit_lr: f64,
    pub model_hidden: Vec<usize>,
    pub q_update_enabled: bool,
    pub q_max_enabled: bool,
}

impl Default for CopacConfig {
    fn default() -> Self {
        CopacConfig {
            episodes: 25,
            candidates: 256,
            explore_sigma_start: 0.2,
            explore_sigma_end: 0.02,
            recalib_rollouts: 10,
            recalib_updates: 2000,
            convergence_tol: 1e-3,
            recalib_batch: 64,
            target_candidates: 32,
            recalib_lr: 3e-4,
            recalib_tau: 0.005,
            fit_epochs: 75,
            fit_lr: 5e-3,
            model_hidden: BrainModel::HIDDEN.to_vec(),
            q_update_enabled: true,
            q_max_enabled: true,
        }
    }
}

impl CopacConfig {
    /// Recalibration off.
    pub fn no_q_update() -> Self {
        CopacConfig {
            q_update_enabled: false,
            ..Default::default()
        }
    }

    /// Recalibration off and uniform-random stimulation.
    pub fn random_sampling() -> Self {
        CopacConfig {
            q_update_enabled: false,
            q_max_enabled: false,
            ..Default::default()
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.fit_epochs,
            lr: self.fit_lr,
            batch_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.candidates == 0 || self.target_candidates == 0 || self.recalib_batch == 0 {
            return Err(Error::Config(
                "episodes, candidates, target_candidates and recalib_batch must be at least 1".into(),
            ));
        }
        if !(self.explore_sigma_start >= 0.0 && self.explore_sigma_end >= 0.0) {
            return Err(Error::Config("exploration sigma must be non-negative".into()));
        }
        if !(self.recalib_tau > 0.0 && self.recalib_tau <= 1.0) || !(self.recalib_lr > 0.0) || !(self.fit_lr > 0.0) {
            return Err(Error::Config(
                "recalibration tau must lie in (0, 1]; learning rates must be positive".into(),
            ));
        }
        if self.fit_epochs == 0 {
            return Err(Error::Config("fit_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

//! Soft actor-critic with a fixed entropy weight.
//!
//! Used to train the world policy and critic, as the model-free baseline on
//! the stimulation action space, and (with a conservative penalty) to learn
//! a critic from logged data.

mod agent;
mod critic;
mod policy;
mod replay;
mod train;

pub use agent::{actor_loss_grads, critic_loss_grads, Conservative, CriticStep, SacAgent, SacLosses};
pub use critic::{ActionValue, CriticPair, FnValue};
pub use policy::{GaussianPolicy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use replay::{Batch, ReplayBuffer};
pub use train::{
    collect_dataset, distill_healthy, sac_coproc_baseline, train_offline_conservative, train_world, DistillConfig,
    WorldTraining,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Entropy weight; fixed during training.
    pub alpha: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps (or gradient updates for offline training).
    pub steps: usize,
    /// Uniform-random steps before the first update.
    pub start_steps: usize,
    pub updates_per_step: usize,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.2,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            batch_size: 256,
            buffer_capacity: 100_000,
            steps: 100_000,
            start_steps: 1000,
            updates_per_step: 1,
            hidden: vec![64, 64],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.gamma, self.tau, self.lr_actor, self.lr_critic]
            .iter()
            .all(|x| *x > 0.0);
        if !positive || !(self.gamma < 1.0) || self.tau > 1.0 {
            return Err(Error::Config(
                "SAC needs 0 < gamma < 1, 0 < tau <= 1 and positive learning rates".into(),
            ));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("entropy weight must be non-negative".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "batch size, buffer capacity and hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

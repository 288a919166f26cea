//! World MDPs with hand-written, deterministic dynamics.
//!
//! * [`Pendulum`]: swing-up with semi-implicit Euler integration.
//! * [`Reacher`]: planar two-link arm chasing a goal.
//! * [`Tabular`]: small finite MDPs (a chain and a self-loop) with exact
//!   value-iteration oracles via [`exact_q`].
//!
//! Every environment holds its own physical state; observations are derived
//! from it. Stepping is a deterministic function of that state, the action
//! and the dynamics parameters.

mod pendulum;
mod reacher;
mod tabular;

pub use pendulum::Pendulum;
pub use reacher::Reacher;
pub use tabular::{exact_q, QTable, Tabular};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMdpSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub gamma: f64,
    pub max_episode_steps: usize,
    pub dynamics_params: BTreeMap<String, f64>,
}

impl WorldMdpSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True only for genuine terminal states; time limits are handled by the
    /// caller through `max_episode_steps`.
    pub done: bool,
}

/// Any of the built-in environments.
#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Pendulum(Pendulum),
    Reacher(Reacher),
    Tabular(Tabular),
}

pub const ENV_NAMES: [&str; 4] = ["pendulum", "reacher", "chain", "self_loop"];

impl World {
    pub fn by_name(name: &str) -> Result<World> {
        match name {
            "pendulum" => Ok(World::Pendulum(Pendulum::default())),
            "reacher" => Ok(World::Reacher(Reacher::default())),
            "chain" => Ok(World::Tabular(Tabular::chain(5))),
            "self_loop" => Ok(World::Tabular(Tabular::self_loop())),
            other => Err(Error::Config(format!(
                "unknown environment {other:?}; expected one of {ENV_NAMES:?}"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            World::Pendulum(_) => "pendulum",
            World::Reacher(_) => "reacher",
            World::Tabular(t) => t.name(),
        }
    }

    pub fn spec(&self) -> WorldMdpSpec {
        match self {
            World::Pendulum(e) => e.spec(),
            World::Reacher(e) => e.spec(),
            World::Tabular(e) => e.spec(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            World::Pendulum(_) => 3,
            World::Reacher(_) => 10,
            World::Tabular(t) => t.n_states(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            World::Reacher(_) => 2,
            _ => 1,
        }
    }

    pub fn max_episode_steps(&self) -> usize {
        match self {
            World::Pendulum(_) => Pendulum::EPISODE_STEPS,
            World::Reacher(_) => Reacher::EPISODE_STEPS,
            World::Tabular(t) => t.max_episode_steps(),
        }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            World::Pendulum(e) => e.reset(rng),
            World::Reacher(e) => e.reset(rng),
            World::Tabular(e) => e.reset(),
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match self {
            World::Pendulum(e) => e.observe(),
            World::Reacher(e) => e.observe(),
            World::Tabular(e) => e.observe(),
        }
    }

    /// Advances the physical state. Actions outside the bounds are clipped.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_len("world action", self.action_dim(), action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite action {action:?}")));
        }
        let result = match self {
            World::Pendulum(e) => e.step(action),
            World::Reacher(e) => e.step(action),
            World::Tabular(e) => e.step(action),
        };
        if !result.reward.is_finite() || result.next_state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain("non-finite state after step".into()));
        }
        Ok(result)
    }

    /// Copy of the environment with `param` scaled by `1 + relative_delta`.
    pub fn perturb(&self, param: &str, relative_delta: f64) -> Result<World> {
        if !(relative_delta.abs() <= 1.0) {
            return Err(Error::Config(format!(
                "relative perturbation must lie in [-1, 1], got {relative_delta}"
            )));
        }
        let current = self.param(param)?;
        let mut out = self.clone();
        out.set_param(param, current * (1.0 + relative_delta))?;
        Ok(out)
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.spec()
            .dynamics_params
            .get(name)
            .copied()
            .ok_or_else(|| self.unknown_param(name))
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Config(format!("parameter {name} must be finite")));
        }
        let ok = match self {
            World::Pendulum(e) => e.set_param(name, value),
            World::Reacher(e) => e.set_param(name, value),
            World::Tabular(_) => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.unknown_param(name))
        }
    }

    fn unknown_param(&self, name: &str) -> Error {
        let known: Vec<String> = self.spec().dynamics_params.into_keys().collect();
        Error::Config(format!(
            "environment {} has no dynamics parameter {name:?} (known: {known:?})",
            self.name()
        ))
    }

    pub fn as_tabular(&self) -> Option<&Tabular> {
        match self {
            World::Tabular(t) => Some(t),
            _ => None,
        }
    }
}

pub(crate) fn wrap_angle(theta: f64) -> f64 {
    (theta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;

use super::{wrap_angle, StepResult, WorldMdpSpec};

/// Torque-limited pendulum swing-up. `theta = 0` is upright.
///
/// Observation: `(cos theta, sin theta, theta_dot)` times `obs_scale`.
/// Reward: `-(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2)` for the pre-step state.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    dt: f64,
    gravity_scale: f64,
    obs_scale: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum {
            theta: PI,
            theta_dot: 0.0,
            dt: 0.05,
            gravity_scale: 1.0,
            obs_scale: 1.0,
        }
    }
}

impl Pendulum {
    pub const BASE_GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const EPISODE_STEPS: usize = 200;

    pub fn from_state(theta: f64, theta_dot: f64) -> Self {
        Pendulum {
            theta,
            theta_dot,
            ..Default::default()
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn gravity(&self) -> f64 {
        Self::BASE_GRAVITY * self.gravity_scale
    }

    /// `(theta, theta_dot)`.
    pub fn physical_state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    /// Mechanical energy of a uniform rod pivoting at one end.
    pub fn energy(&self) -> f64 {
        let (m, l) = (Self::MASS, Self::LENGTH);
        0.5 * (m * l * l / 3.0) * self.theta_dot.powi(2) + m * self.gravity() * (l / 2.0) * self.theta.cos()
    }

    pub(super) fn spec(&self) -> WorldMdpSpec {
        WorldMdpSpec {
            name: "pendulum".into(),
            state_dim: 3,
            action_dim: 1,
            action_low: vec![-Self::MAX_TORQUE],
            action_high: vec![Self::MAX_TORQUE],
            gamma: 0.99,
            max_episode_steps: Self::EPISODE_STEPS,
            dynamics_params: BTreeMap::from([
                ("gravity_scale".to_string(), self.gravity_scale),
                ("obs_scale".to_string(), self.obs_scale),
            ]),
        }
    }

    pub(super) fn set_param(&mut self, name: &str, value: f64) -> bool {
        match name {
            "gravity_scale" => self.gravity_scale = value,
            "obs_scale" => self.obs_scale = value,
            _ => return false,
        }
        true
    }

    pub(super) fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.theta = rng.random_range(-PI..=PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.observe()
    }

    pub(super) fn observe(&self) -> Vec<f64> {
        let k = self.obs_scale;
        vec![k * self.theta.cos(), k * self.theta.sin(), k * self.theta_dot]
    }

    pub(super) fn step(&mut self, action: &[f64]) -> StepResult {
        let u = action[0].clamp(-Self::MAX_TORQUE, Self::MAX_TORQUE);
        let (m, l, g, dt) = (Self::MASS, Self::LENGTH, self.gravity(), self.dt);
        let cost = wrap_angle(self.theta).powi(2) + 0.1 * self.theta_dot.powi(2) + 0.001 * u * u;
        let accel = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 / (m * l * l) * u;
        self.theta_dot = (self.theta_dot + dt * accel).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += dt * self.theta_dot;
        StepResult {
            next_state: self.observe(),
            reward: -cost,
            done: false,
        }
    }
}

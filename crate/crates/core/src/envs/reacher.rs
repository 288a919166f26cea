use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;

use super::{StepResult, WorldMdpSpec};

/// Planar two-link arm with torque-driven joints, unit total reach.
///
/// Each joint follows `q'' = gain * u - damping * q'` (semi-implicit Euler).
/// Observation (dim 10): `cos q1, cos q2, sin q1, sin q2, q1', q2', goal_x,
/// goal_y, tip_x - goal_x, tip_y - goal_y`, all times `obs_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reacher {
    q: [f64; 2],
    qd: [f64; 2],
    goal: [f64; 2],
    dt: f64,
    gain_scale: f64,
    damping_scale: f64,
    obs_scale: f64,
}

impl Default for Reacher {
    fn default() -> Self {
        Reacher {
            q: [0.0; 2],
            qd: [0.0; 2],
            goal: [0.5, 0.0],
            dt: 0.05,
            gain_scale: 1.0,
            damping_scale: 1.0,
            obs_scale: 1.0,
        }
    }
}

impl Reacher {
    pub const LINK: f64 = 0.5;
    pub const GAIN: f64 = 5.0;
    pub const DAMPING: f64 = 1.0;
    pub const MAX_SPEED: f64 = 10.0;
    pub const EPISODE_STEPS: usize = 150;
    pub const GOAL_RADIUS: (f64, f64) = (0.25, 0.95);

    pub fn from_state(q: [f64; 2], qd: [f64; 2], goal: [f64; 2]) -> Self {
        Reacher {
            q,
            qd,
            goal,
            ..Default::default()
        }
    }

    pub fn joints(&self) -> ([f64; 2], [f64; 2]) {
        (self.q, self.qd)
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn fingertip(&self) -> [f64; 2] {
        let (a, b) = (self.q[0], self.q[0] + self.q[1]);
        [
            Self::LINK * a.cos() + Self::LINK * b.cos(),
            Self::LINK * a.sin() + Self::LINK * b.sin(),
        ]
    }

    pub fn distance_to_goal(&self) -> f64 {
        let tip = self.fingertip();
        ((tip[0] - self.goal[0]).powi(2) + (tip[1] - self.goal[1]).powi(2)).sqrt()
    }

    pub(super) fn spec(&self) -> WorldMdpSpec {
        WorldMdpSpec {
            name: "reacher".into(),
            state_dim: 10,
            action_dim: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            gamma: 0.99,
            max_episode_steps: Self::EPISODE_STEPS,
            dynamics_params: BTreeMap::from([
                ("damping_scale".to_string(), self.damping_scale),
                ("gain_scale".to_string(), self.gain_scale),
                ("obs_scale".to_string(), self.obs_scale),
            ]),
        }
    }

    pub(super) fn set_param(&mut self, name: &str, value: f64) -> bool {
        match name {
            "gain_scale" => self.gain_scale = value,
            "damping_scale" => self.damping_scale = value,
            "obs_scale" => self.obs_scale = value,
            _ => return false,
        }
        true
    }

    pub(super) fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.q = [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)];
        self.qd = [0.0; 2];
        let radius = rng.random_range(Self::GOAL_RADIUS.0..=Self::GOAL_RADIUS.1);
        let angle = rng.random_range(-PI..=PI);
        self.goal = [radius * angle.cos(), radius * angle.sin()];
        self.observe()
    }

    pub(super) fn observe(&self) -> Vec<f64> {
        let tip = self.fingertip();
        let k = self.obs_scale;
        [
            self.q[0].cos(),
            self.q[1].cos(),
            self.q[0].sin(),
            self.q[1].sin(),
            self.qd[0],
            self.qd[1],
            self.goal[0],
            self.goal[1],
            tip[0] - self.goal[0],
            tip[1] - self.goal[1],
        ]
        .iter()
        .map(|x| k * x)
        .collect()
    }

    pub(super) fn step(&mut self, action: &[f64]) -> StepResult {
        let u = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let reward = -self.distance_to_goal() - 0.01 * (u[0] * u[0] + u[1] * u[1]);
        let gain = Self::GAIN * self.gain_scale;
        let damping = Self::DAMPING * self.damping_scale;
        for j in 0..2 {
            let accel = gain * u[j] - damping * self.qd[j];
            self.qd[j] = (self.qd[j] + self.dt * accel).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            self.q[j] += self.dt * self.qd[j];
        }
        StepResult {
            next_state: self.observe(),
            reward,
            done: false,
        }
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{StepResult, WorldMdpSpec};

/// Finite deterministic MDP with one-hot observations and a single
/// continuous action in `[-1, 1]` decoded to a discrete index.
///
/// With two actions, `a < 0` selects action 0 ("left") and `a >= 0` action 1
/// ("right"). With one action every input selects it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabular {
    name: String,
    next: Vec<Vec<usize>>,
    reward: Vec<Vec<f64>>,
    terminal: Vec<bool>,
    start: usize,
    gamma: f64,
    max_steps: usize,
    state: usize,
}

impl Tabular {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;

    /// `n` states in a line, start at 0, terminal goal at `n - 1`.
    /// Right moves up (reward 1 on entering the goal), left moves down
    /// (clamped at 0, reward 0).
    pub fn chain(n: usize) -> Self {
        assert!(n >= 2, "chain needs at least two states");
        let goal = n - 1;
        let next = (0..n)
            .map(|s| {
                if s == goal {
                    vec![s, s]
                } else {
                    vec![s.saturating_sub(1), s + 1]
                }
            })
            .collect();
        let reward = (0..n)
            .map(|s| if s + 1 == goal { vec![0.0, 1.0] } else { vec![0.0, 0.0] })
            .collect();
        let mut terminal = vec![false; n];
        terminal[goal] = true;
        Tabular {
            name: "chain".into(),
            next,
            reward,
            terminal,
            start: 0,
            gamma: 0.9,
            max_steps: 20,
            state: 0,
        }
    }

    /// One state, one action, reward 1 forever.
    pub fn self_loop() -> Self {
        Tabular {
            name: "self_loop".into(),
            next: vec![vec![0]],
            reward: vec![vec![1.0]],
            terminal: vec![false],
            start: 0,
            gamma: 0.9,
            max_steps: 50,
            state: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_episode_steps(&self) -> usize {
        self.max_steps
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn current(&self) -> usize {
        self.state
    }

    pub fn decode_action(&self, a: f64) -> usize {
        if self.n_actions() == 1 || a < 0.0 {
            0
        } else {
            1
        }
    }

    /// Continuous action that decodes to `index`.
    pub fn encode_action(&self, index: usize) -> f64 {
        if index == 0 && self.n_actions() > 1 {
            -1.0
        } else {
            1.0
        }
    }

    /// `(next state, reward, done)` for a discrete action.
    pub fn transition(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let s2 = self.next[s][a];
        (s2, self.reward[s][a], self.terminal[s2])
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states()];
        v[s] = 1.0;
        v
    }

    /// Inverse of [`Self::one_hot`]: index of the largest entry.
    pub fn state_index(&self, obs: &[f64]) -> usize {
        obs.iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0
    }

    pub fn set_state(&mut self, s: usize) {
        self.state = s;
    }

    pub(super) fn spec(&self) -> WorldMdpSpec {
        WorldMdpSpec {
            name: self.name.clone(),
            state_dim: self.n_states(),
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            gamma: self.gamma,
            max_episode_steps: self.max_steps,
            dynamics_params: BTreeMap::new(),
        }
    }

    pub(super) fn reset(&mut self) -> Vec<f64> {
        self.state = self.start;
        self.observe()
    }

    pub(super) fn observe(&self) -> Vec<f64> {
        self.one_hot(self.state)
    }

    pub(super) fn step(&mut self, action: &[f64]) -> StepResult {
        let a = self.decode_action(action[0]);
        let (s2, r, done) = self.transition(self.state, a);
        self.state = s2;
        StepResult {
            next_state: self.observe(),
            reward: r,
            done,
        }
    }
}

/// Action values indexed `[state][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
    pub action_set: Vec<usize>,
}

impl QTable {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }

    /// Best action from the allowed set; ties go to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        let mut best = self.action_set[0];
        for &a in &self.action_set[1..] {
            if self.values[s][a] > self.values[s][best] {
                best = a;
            }
        }
        best
    }

    pub fn value(&self, s: usize) -> f64 {
        self.values[s][self.greedy(s)]
    }
}

/// Value iteration on `Q(s, a) = r + gamma * max_{a' in action_set} Q(s', a')`
/// until the sup-norm Bellman residual drops below `tol`.
///
/// Q is reported for every action (not only the allowed ones) so that a
/// restricted table still says what an unrealizable action would be worth;
/// only the bootstrap maximum is restricted. Terminal states have value 0.
pub fn exact_q(env: &Tabular, action_set: &[usize], gamma: f64, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if action_set.is_empty() || action_set.iter().any(|&a| a >= env.n_actions()) {
        return Err(Error::Config(format!("invalid action set {action_set:?}")));
    }
    let (ns, na) = (env.n_states(), env.n_actions());
    let mut q = vec![vec![0.0; na]; ns];
    let backup = |q: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        if env.is_terminal(s) {
                            return 0.0;
                        }
                        let (s2, r, done) = env.transition(s, a);
                        let cont = if done {
                            0.0
                        } else {
                            action_set.iter().map(|&b| q[s2][b]).fold(f64::MIN, f64::max)
                        };
                        r + gamma * cont
                    })
                    .collect()
            })
            .collect()
    };
    loop {
        let next = backup(&q);
        let residual = next
            .iter()
            .flatten()
            .zip(q.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        // ||T q_new - q_new|| <= gamma * ||q_new - q_old||.
        if gamma * residual < tol {
            break;
        }
    }
    Ok(QTable {
        values: q,
        action_set: action_set.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_always_starts_at_zero() {
        let mut c = Tabular::chain(5);
        for _ in 0..3 {
            c.step(&[1.0]);
            assert_eq!(c.reset(), c.one_hot(0));
        }
    }

    #[test]
    fn chain_table_lookup() {
        let c = Tabular::chain(5);
        assert_eq!(c.transition(2, Tabular::RIGHT), (3, 0.0, false));
        assert_eq!(c.transition(3, Tabular::RIGHT), (4, 1.0, true));
        assert_eq!(c.transition(0, Tabular::LEFT), (0, 0.0, false));
        assert_eq!(c.decode_action(-0.2), Tabular::LEFT);
        assert_eq!(c.decode_action(0.0), Tabular::RIGHT);
    }

    #[test]
    fn self_loop_geometric_series() {
        let t = Tabular::self_loop();
        let q = exact_q(&t, &[0], 0.9, 1e-10).unwrap();
        assert!((q.q(0, 0) - 10.0).abs() < 1e-8);
    }

    #[test]
    fn chain_values_are_discounted_distance() {
        let c = Tabular::chain(5);
        let q = exact_q(&c, &[0, 1], 0.9, 1e-12).unwrap();
        for s in 0..4 {
            let steps_to_goal = 4 - s;
            let v = 0.9f64.powi(steps_to_goal as i32 - 1);
            assert!((q.q(s, Tabular::RIGHT) - v).abs() < 1e-10);
            assert_eq!(q.greedy(s), Tabular::RIGHT);
        }
        assert!((q.q(0, Tabular::LEFT) - 0.9 * 0.729).abs() < 1e-10);
        assert_eq!(q.value(4), 0.0);
    }

    #[test]
    fn restricted_to_left_is_worthless() {
        let c = Tabular::chain(5);
        let q = exact_q(&c, &[Tabular::LEFT], 0.9, 1e-10).unwrap();
        assert_eq!(q.q(0, Tabular::LEFT), 0.0);
        // From state 3 an unrealizable right move still pays once.
        assert_eq!(q.q(3, Tabular::RIGHT), 1.0);
    }

    #[test]
    fn bellman_optimality_holds_within_tol() {
        let c = Tabular::chain(5);
        for tol in [1e-2, 1e-4, 1e-8] {
            let q = exact_q(&c, &[0, 1], 0.9, tol).unwrap();
            for s in 0..5 {
                for a in 0..2 {
                    let target = if c.is_terminal(s) {
                        0.0
                    } else {
                        let (s2, r, done) = c.transition(s, a);
                        r + if done { 0.0 } else { 0.9 * q.value(s2) }
                    };
                    assert!((q.q(s, a) - target).abs() < tol);
                }
            }
        }
    }

    #[test]
    fn bad_tolerance_is_config_error() {
        let c = Tabular::chain(5);
        assert!(matches!(exact_q(&c, &[0], 0.9, 0.0), Err(Error::Config(_))));
        assert!(matches!(exact_q(&c, &[], 0.9, 1e-3), Err(Error::Config(_))));
    }
}

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{hstack, Activation, FeedforwardNet};

/// Something that scores `(state, action)` rows.
pub trait ActionValue {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn q_batch(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>>;

    fn q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row view");
        Ok(self.q_batch(s, a)?[0])
    }
}

/// Wraps a plain function as an [`ActionValue`].
pub struct FnValue<F> {
    pub state_dim: usize,
    pub action_dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &[f64]) -> f64> ActionValue for FnValue<F> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn q_batch(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_len("value rows", states.nrows(), actions.nrows())?;
        Ok(states
            .rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(s, a)| (self.f)(&s.to_vec(), &a.to_vec()))
            .collect())
    }
}

/// Twin Q-networks over `state ++ action` with Polyak-averaged targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticPair {
    pub q1: FeedforwardNet,
    pub q2: FeedforwardNet,
    pub q1_target: FeedforwardNet,
    pub q2_target: FeedforwardNet,
    pub tau: f64,
    state_dim: usize,
}

impl CriticPair {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
        }
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let q1 = FeedforwardNet::new(&dims, Activation::Relu, Activation::Identity, rng)?;
        let q2 = FeedforwardNet::new(&dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(CriticPair {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            tau,
            state_dim,
        })
    }

    pub fn input(states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("critic batch rows", states.nrows(), actions.nrows())?;
        Ok(hstack(states, actions))
    }

    fn pair_min(a: &FeedforwardNet, b: &FeedforwardNet, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let qa = a.forward_batch(x)?;
        let qb = b.forward_batch(x)?;
        Ok(qa.column(0).iter().zip(qb.column(0)).map(|(x, y)| x.min(*y)).collect())
    }

    /// `min(q1, q2)` of the online networks.
    pub fn min_online(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let x = Self::input(states, actions)?;
        Self::pair_min(&self.q1, &self.q2, x.view())
    }

    /// `min(q1_target, q2_target)`.
    pub fn min_target(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let x = Self::input(states, actions)?;
        Self::pair_min(&self.q1_target, &self.q2_target, x.view())
    }

    /// `target <- tau * online + (1 - tau) * target` for both heads.
    pub fn soft_update(&mut self) {
        self.q1_target.soft_update_from(&self.q1, self.tau);
        self.q2_target.soft_update_from(&self.q2, self.tau);
    }

    /// Distance between online and target parameters, both heads combined.
    pub fn target_gap(&self) -> f64 {
        (self.q1.param_distance(&self.q1_target).powi(2) + self.q2.param_distance(&self.q2_target).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.q1.is_finite() && self.q2.is_finite() && self.q1_target.is_finite() && self.q2_target.is_finite()
    }

    /// `min(q1, q2)` together with its gradient with respect to the action
    /// columns (taken from whichever head is smaller in each row).
    pub fn min_online_with_action_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let x = Self::input(states, actions)?;
        let c1 = self.q1.forward_cached(x.view())?;
        let c2 = self.q2.forward_cached(x.view())?;
        let n = x.nrows();
        let mut m1 = Array2::zeros((n, 1));
        let mut m2 = Array2::zeros((n, 1));
        let mut q = Array1::zeros(n);
        for i in 0..n {
            let (a, b) = (c1.output()[[i, 0]], c2.output()[[i, 0]]);
            if a <= b {
                q[i] = a;
                m1[[i, 0]] = 1.0;
            } else {
                q[i] = b;
                m2[[i, 0]] = 1.0;
            }
        }
        let g = self.q1.backward_inputs(&c1, m1.view())? + self.q2.backward_inputs(&c2, m2.view())?;
        let grad = g.slice(ndarray::s![.., self.state_dim..]).to_owned();
        Ok((q, grad))
    }
}

impl ActionValue for CriticPair {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.q1.input_dim() - self.state_dim
    }

    fn q_batch(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.min_online(states, actions)
    }
}

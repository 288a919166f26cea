use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, FeedforwardNet, ForwardCache};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps `ln(1 - tanh^2)` finite when the pre-squash sample saturates.
pub(crate) const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Tanh-squashed diagonal Gaussian policy. The network outputs the mean and
/// the (clamped) log standard deviation of the pre-squash Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: FeedforwardNet,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

/// Reparameterized samples for a batch, with everything backprop needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub cache: ForwardCache,
    pub noise: Array2<f64>,
    pub log_std: Array2<f64>,
    /// 1.0 where the raw log-std lies inside the clamp range.
    pub log_std_live: Array2<f64>,
    pub squashed: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        check_len("policy action bounds", action_low.len(), action_high.len())?;
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * action_low.len());
        let net = FeedforwardNet::new(&dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(GaussianPolicy {
            net,
            action_low,
            action_high,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn half_range(&self, k: usize) -> f64 {
        0.5 * (self.action_high[k] - self.action_low[k])
    }

    fn center(&self, k: usize) -> f64 {
        0.5 * (self.action_high[k] + self.action_low[k])
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(state)?;
        Ok((0..self.action_dim())
            .map(|k| self.center(k) + self.half_range(k) * out[k].tanh())
            .collect())
    }

    pub fn mean_actions(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let out = self.net.forward_batch(states)?;
        let na = self.action_dim();
        let mut a = out.slice(s![.., ..na]).to_owned();
        for (k, mut col) in a.columns_mut().into_iter().enumerate() {
            let (c, h) = (self.center(k), self.half_range(k));
            col.mapv_inplace(|m| c + h * m.tanh());
        }
        Ok(a)
    }

    /// Draws standard normal noise of the right shape.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.action_dim()), || rng.sample(StandardNormal))
    }

    /// Single stochastic action.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let noise = self.draw_noise(1, rng);
        let s = self.sample_with_noise(x, noise)?;
        Ok(s.actions.row(0).to_vec())
    }

    /// Reparameterized sample `a = c + h * tanh(mu + sigma * noise)` and its
    /// log-density under the squashed distribution.
    pub fn sample_with_noise(&self, states: ArrayView2<'_, f64>, noise: Array2<f64>) -> Result<PolicySample> {
        let na = self.action_dim();
        check_len("policy noise rows", states.nrows(), noise.nrows())?;
        check_len("policy noise columns", na, noise.ncols())?;
        let cache = self.net.forward_cached(states)?;
        let out = cache.output();
        let n = states.nrows();
        let mut log_std = Array2::zeros((n, na));
        let mut live = Array2::zeros((n, na));
        let mut squashed = Array2::zeros((n, na));
        let mut actions = Array2::zeros((n, na));
        let mut log_prob = Array1::zeros(n);
        for i in 0..n {
            let mut lp = 0.0;
            for k in 0..na {
                let raw = out[[i, na + k]];
                let l = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e = noise[[i, k]];
                let t = (out[[i, k]] + l.exp() * e).tanh();
                let h = self.half_range(k);
                log_std[[i, k]] = l;
                live[[i, k]] = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    1.0
                } else {
                    0.0
                };
                squashed[[i, k]] = t;
                actions[[i, k]] = self.center(k) + h * t;
                lp += -0.5 * e * e - l - HALF_LN_2PI - (1.0 - t * t + SQUASH_EPS).ln() - h.ln();
            }
            log_prob[i] = lp;
        }
        if !log_prob.iter().all(|x| x.is_finite()) {
            return Err(Error::TrainingDivergence("non-finite policy log-probability".into()));
        }
        Ok(PolicySample {
            cache,
            noise,
            log_std,
            log_std_live: live,
            squashed,
            actions,
            log_prob,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GaussianPolicy::new(3, vec![-2.0, 0.0], vec![2.0, 1.0], &[16], &mut rng).unwrap();
        let states = Array2::from_shape_simple_fn((100_000, 3), || rng.random_range(-3.0..3.0));
        let noise = p.draw_noise(100_000, &mut rng) * 5.0;
        let s = p.sample_with_noise(states.view(), noise).unwrap();
        for row in s.actions.rows() {
            assert!((-2.0..=2.0).contains(&row[0]));
            assert!((0.0..=1.0).contains(&row[1]));
        }
    }

    #[test]
    fn log_prob_matches_one_dimensional_density() {
        // Unit interval bounds, zero-weight net: mu = 0, log_std = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GaussianPolicy::new(1, vec![-1.0], vec![1.0], &[4], &mut rng).unwrap();
        let zeros = vec![0.0; p.net.num_params()];
        p.net.set_flat_params(&zeros).unwrap();
        let e = 0.3;
        let s = p
            .sample_with_noise(
                ArrayView2::from_shape((1, 1), &[0.5]).unwrap(),
                Array2::from_elem((1, 1), e),
            )
            .unwrap();
        let t: f64 = e.tanh();
        let gauss = (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expected = (gauss / (1.0 - t * t + SQUASH_EPS)).ln();
        assert!((s.log_prob[0] - expected).abs() < 1e-12);
        assert!((s.actions[[0, 0]] - t).abs() < 1e-15);
    }
}

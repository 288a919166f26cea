use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_update, AdamState, Gradients};

use super::critic::CriticPair;
use super::policy::{GaussianPolicy, SQUASH_EPS};
use super::replay::Batch;
use super::SacConfig;

/// Conservative critic regularizer: `weight * mean_i(logsumexp_j Q(s_i, u_ij)
/// - Q(s_i, a_i))` over `samples` uniform actions `u_ij` per state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Conservative {
    pub weight: f64,
    pub samples: usize,
}

impl Default for Conservative {
    fn default() -> Self {
        Conservative {
            weight: 1.0,
            samples: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticStep {
    pub loss: [f64; 2],
    pub grads: [Gradients; 2],
    pub targets: Array1<f64>,
}

/// Losses and parameter gradients of both critics for one batch.
///
/// Each head minimizes `mean((Q_i(s, a) - y)^2)` with
/// `y = r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s'))`,
/// `a'` drawn with `next_noise`. When `conservative` is given,
/// `uniform_actions` holds `samples` rows per batch row.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_grads(
    critics: &CriticPair,
    policy: &GaussianPolicy,
    batch: &Batch,
    next_noise: Array2<f64>,
    gamma: f64,
    alpha: f64,
    conservative: Option<(Conservative, ArrayView2<'_, f64>)>,
) -> Result<CriticStep> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyData("critic batch"));
    }
    let next = policy.sample_with_noise(batch.next_states.view(), next_noise)?;
    let q_next = critics.min_target(batch.next_states.view(), next.actions.view())?;
    let targets: Array1<f64> = (0..n)
        .map(|i| batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * (q_next[i] - alpha * next.log_prob[i]))
        .collect();
    if !targets.iter().all(|y| y.is_finite()) {
        return Err(Error::TrainingDivergence("non-finite critic target".into()));
    }
    let x = CriticPair::input(batch.states.view(), batch.actions.view())?;
    let repeated = conservative
        .map(|(c, u)| -> Result<Array2<f64>> {
            let states = batch
                .states
                .select(Axis(0), &(0..n * c.samples).map(|k| k / c.samples).collect::<Vec<_>>());
            CriticPair::input(states.view(), u)
        })
        .transpose()?;

    let mut loss = [0.0; 2];
    let mut grads = Vec::with_capacity(2);
    for (h, net) in [&critics.q1, &critics.q2].into_iter().enumerate() {
        let cache = net.forward_cached(x.view())?;
        let q = cache.output().column(0).to_owned();
        let diff = &q - &targets;
        loss[h] = diff.mapv(|d| d * d).sum() / n as f64;
        let mut out_grad = diff.mapv(|d| 2.0 * d / n as f64).insert_axis(Axis(1));
        let mut g = None;
        if let (Some((c, _)), Some(xr)) = (conservative, repeated.as_ref()) {
            let rc = net.forward_cached(xr.view())?;
            let qu = rc.output().column(0);
            let mut ug = Array2::zeros((n * c.samples, 1));
            let mut penalty = 0.0;
            for i in 0..n {
                let block = qu.slice(s![i * c.samples..(i + 1) * c.samples]);
                let m = block.fold(f64::MIN, |a, &b| a.max(b));
                let z: f64 = block.iter().map(|v| (v - m).exp()).sum();
                penalty += m + z.ln() - q[i];
                for j in 0..c.samples {
                    ug[[i * c.samples + j, 0]] = c.weight * (block[j] - m).exp() / z / n as f64;
                }
                out_grad[[i, 0]] -= c.weight / n as f64;
            }
            loss[h] += c.weight * penalty / n as f64;
            let (gu, _) = net.backward(&rc, ug.view())?;
            g = Some(gu);
        }
        let (mut gq, _) = net.backward(&cache, out_grad.view())?;
        if let Some(gu) = g {
            gq.add_assign(&gu);
        }
        grads.push(gq);
    }
    let g2 = grads.pop().expect("two heads");
    let g1 = grads.pop().expect("two heads");
    Ok(CriticStep {
        loss,
        grads: [g1, g2],
        targets,
    })
}

/// Actor loss `mean(alpha log pi(a|s) - min Q(s, a))` with `a` drawn from
/// `noise`, and its gradient with respect to the policy parameters.
pub fn actor_loss_grads(
    policy: &GaussianPolicy,
    critics: &CriticPair,
    states: ArrayView2<'_, f64>,
    noise: Array2<f64>,
    alpha: f64,
) -> Result<(f64, Gradients)> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::EmptyData("actor batch"));
    }
    let na = policy.action_dim();
    let sample = policy.sample_with_noise(states, noise)?;
    let (q, dq_da) = critics.min_online_with_action_grad(states, sample.actions.view())?;
    let loss = (alpha * &sample.log_prob - &q).sum() / n as f64;

    let mut out_grad = Array2::zeros((n, 2 * na));
    for i in 0..n {
        for k in 0..na {
            let t = sample.squashed[[i, k]];
            let sigma = sample.log_std[[i, k]].exp();
            let eps = sample.noise[[i, k]];
            let h = 0.5 * (policy.action_high[k] - policy.action_low[k]);
            let one_minus = 1.0 - t * t;
            // d/du of -ln(1 - tanh(u)^2 + eps).
            let g = 2.0 * t * one_minus / (one_minus + SQUASH_EPS);
            let dq_du = dq_da[[i, k]] * h * one_minus;
            out_grad[[i, k]] = (alpha * g - dq_du) / n as f64;
            let d_log_std = alpha * (-1.0 + g * sigma * eps) - dq_du * sigma * eps;
            out_grad[[i, na + k]] = d_log_std * sample.log_std_live[[i, k]] / n as f64;
        }
    }
    let (grads, _) = policy.net.backward(&sample.cache, out_grad.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
}

/// Policy, critics, and their optimizer state.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub policy: GaussianPolicy,
    pub critics: CriticPair,
    pub config: SacConfig,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let action_dim = action_low.len();
        let policy = GaussianPolicy::new(state_dim, action_low, action_high, &config.hidden, rng)?;
        let critics = CriticPair::new(state_dim, action_dim, &config.hidden, config.tau, rng)?;
        Ok(SacAgent::from_parts(policy, critics, config))
    }

    pub fn from_parts(policy: GaussianPolicy, mut critics: CriticPair, config: SacConfig) -> Self {
        critics.tau = config.tau;
        SacAgent {
            actor_opt: AdamState::for_net(&policy.net),
            q1_opt: AdamState::for_net(&critics.q1),
            q2_opt: AdamState::for_net(&critics.q2),
            policy,
            critics,
            config,
        }
    }

    /// Critic step, actor step, then Polyak target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<SacLosses> {
        self.update_inner(batch, None, true, rng)
    }

    /// As [`Self::update`] with the conservative penalty on both critics.
    pub fn update_conservative<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        conservative: Conservative,
        rng: &mut R,
    ) -> Result<SacLosses> {
        self.update_inner(batch, Some(conservative), true, rng)
    }

    fn update_inner<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        conservative: Option<Conservative>,
        train_actor: bool,
        rng: &mut R,
    ) -> Result<SacLosses> {
        let cfg = &self.config;
        let n = batch.len();
        let next_noise = self.policy.draw_noise(n, rng);
        let uniform = conservative.map(|c| {
            let (lo, hi) = (&self.policy.action_low, &self.policy.action_high);
            Array2::from_shape_fn((n * c.samples, lo.len()), |(_, k)| rng.random_range(lo[k]..=hi[k]))
        });
        let step = critic_loss_grads(
            &self.critics,
            &self.policy,
            batch,
            next_noise,
            cfg.gamma,
            cfg.alpha,
            conservative.zip(uniform.as_ref().map(|u| u.view())),
        )?;
        let critic_loss = 0.5 * (step.loss[0] + step.loss[1]);
        if !critic_loss.is_finite() {
            return Err(Error::TrainingDivergence("non-finite critic loss".into()));
        }
        let [g1, g2] = step.grads;
        adam_update(&mut self.critics.q1, &g1, &mut self.q1_opt, cfg.lr_critic)?;
        adam_update(&mut self.critics.q2, &g2, &mut self.q2_opt, cfg.lr_critic)?;

        let mut actor_loss = 0.0;
        if train_actor {
            let noise = self.policy.draw_noise(n, rng);
            let (loss, g) = actor_loss_grads(&self.policy, &self.critics, batch.states.view(), noise, cfg.alpha)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence("non-finite actor loss".into()));
            }
            adam_update(&mut self.policy.net, &g, &mut self.actor_opt, cfg.lr_actor)?;
            actor_loss = loss;
        }
        self.critics.soft_update();
        Ok(SacLosses {
            critic: critic_loss,
            actor: actor_loss,
        })
    }
}

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brain::{unscale_from_bounds, Brain, HealthyBrain};
use crate::envs::World;
use crate::error::{check_len, Error, Result};
use crate::harness::evaluate::{evaluate_coprocessor, EpisodeStats, EvalProtocol};
use crate::nn::{mse_fit, FitOptions};

use super::agent::{Conservative, SacAgent};
use super::critic::CriticPair;
use super::policy::GaussianPolicy;
use super::replay::ReplayBuffer;
use super::SacConfig;

fn uniform_action<R: Rng + ?Sized>(low: &[f64], high: &[f64], rng: &mut R) -> Vec<f64> {
    low.iter().zip(high).map(|(l, h)| rng.random_range(*l..=*h)).collect()
}

/// Output of world-MDP training.
#[derive(Debug, Clone)]
pub struct WorldTraining {
    pub policy: GaussianPolicy,
    pub critics: CriticPair,
    /// Return of every completed training episode.
    pub episode_returns: Vec<f64>,
    pub replay: ReplayBuffer,
}

/// SAC in the world MDP for `config.steps` environment steps.
pub fn train_world<R: Rng + ?Sized>(env: &World, config: &SacConfig, rng: &mut R) -> Result<WorldTraining> {
    let spec = env.spec();
    let mut agent = SacAgent::new(
        spec.state_dim,
        spec.action_low.clone(),
        spec.action_high.clone(),
        config.clone(),
        rng,
    )?;
    let mut replay = ReplayBuffer::new(config.buffer_capacity, spec.state_dim, spec.action_dim);
    let mut env = env.clone();
    let mut state = env.reset(rng);
    let (mut ep_return, mut t) = (0.0, 0);
    let mut episode_returns = Vec::new();
    for step in 0..config.steps {
        let action = if step < config.start_steps {
            uniform_action(&spec.action_low, &spec.action_high, rng)
        } else {
            agent.policy.sample(&state, rng)?
        };
        let r = env.step(&action)?;
        replay.push(&state, &action, r.reward, &r.next_state, r.done)?;
        ep_return += r.reward;
        t += 1;
        state = r.next_state;
        if r.done || t >= spec.max_episode_steps {
            episode_returns.push(ep_return);
            state = env.reset(rng);
            ep_return = 0.0;
            t = 0;
        }
        if step + 1 >= config.start_steps {
            for _ in 0..config.updates_per_step {
                let batch = replay.sample(config.batch_size, rng)?;
                agent.update(&batch, rng)?;
            }
        }
    }
    Ok(WorldTraining {
        policy: agent.policy,
        critics: agent.critics,
        episode_returns,
        replay,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub states: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            states: 50_000,
            epochs: 20,
            lr: 1e-3,
            batch_size: 256,
        }
    }
}

/// Regresses the policy's deterministic mean into a plain tanh network on
/// states visited by the stochastic policy.
pub fn distill_healthy(policy: &GaussianPolicy, env: &World, config: DistillConfig, seed: u64) -> Result<HealthyBrain> {
    let spec = env.spec();
    check_len("distilled policy state", spec.state_dim, policy.state_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = env.clone();
    let mut states = Vec::with_capacity(config.states * spec.state_dim);
    let mut targets = Vec::with_capacity(config.states * spec.action_dim);
    let mut s = env.reset(&mut rng);
    let mut t = 0;
    for _ in 0..config.states {
        let mean = policy.mean_action(&s)?;
        states.extend_from_slice(&s);
        targets.extend(unscale_from_bounds(&mean, &spec));
        let a = policy.sample(&s, &mut rng)?;
        let r = env.step(&a)?;
        t += 1;
        s = r.next_state;
        if r.done || t >= spec.max_episode_steps {
            s = env.reset(&mut rng);
            t = 0;
        }
    }
    let x = Array2::from_shape_vec((config.states, spec.state_dim), states).expect("shape");
    let y = Array2::from_shape_vec((config.states, spec.action_dim), targets).expect("shape");
    let mut healthy = HealthyBrain::random(spec, rng.random())?;
    mse_fit(
        &mut healthy.policy_net,
        x.view(),
        y.view(),
        FitOptions {
            epochs: config.epochs,
            lr: config.lr,
            batch_size: Some(config.batch_size),
        },
        &mut rng,
    )?;
    Ok(healthy)
}

/// SAC acting directly in stimulation space through the true brain.
/// Returns one [`EpisodeStats`] per episode; evaluation uses the
/// deterministic mean policy on a separate copy of the brain.
pub fn sac_coproc_baseline<B, R>(
    env: &World,
    brain: &B,
    episodes: usize,
    config: &SacConfig,
    eval: EvalProtocol,
    rng: &mut R,
) -> Result<Vec<EpisodeStats>>
where
    B: Brain + Clone,
    R: Rng + ?Sized,
{
    let started = std::time::Instant::now();
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let spec = env.spec();
    let (low, high) = (brain.stim_low().to_vec(), brain.stim_high().to_vec());
    let mut agent = SacAgent::new(spec.state_dim, low.clone(), high.clone(), config.clone(), rng)?;
    let mut replay = ReplayBuffer::new(config.buffer_capacity, spec.state_dim, brain.stim_dim());
    let eval_brain = brain.clone();
    let mut env = env.clone();
    let mut total_steps = 0usize;
    let mut out = Vec::with_capacity(episodes);
    for episode in 1..=episodes {
        let mut state = env.reset(rng);
        let mut train_return = 0.0;
        for _ in 0..spec.max_episode_steps {
            let stim = if total_steps < config.start_steps {
                uniform_action(&low, &high, rng)
            } else {
                agent.policy.sample(&state, rng)?
            };
            let action = brain.act(&state, &stim)?;
            let r = env.step(&action)?;
            replay.push(&state, &stim, r.reward, &r.next_state, r.done)?;
            train_return += r.reward;
            state = r.next_state;
            total_steps += 1;
            if total_steps >= config.start_steps {
                for _ in 0..config.updates_per_step {
                    let batch = replay.sample(config.batch_size, rng)?;
                    agent.update(&batch, rng)?;
                }
            }
            if r.done {
                break;
            }
        }
        let eval_return = evaluate_coprocessor(&env, &eval_brain, eval, |s| agent.policy.mean_action(s))?;
        out.push(EpisodeStats {
            episode,
            train_return,
            eval_return,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Logged world transitions: each step follows `policy` (stochastically)
/// with probability `1 - random_fraction`, otherwise a uniform action.
/// With no policy every action is uniform.
pub fn collect_dataset<R: Rng + ?Sized>(
    env: &World,
    policy: Option<&GaussianPolicy>,
    steps: usize,
    random_fraction: f64,
    rng: &mut R,
) -> Result<ReplayBuffer> {
    let spec = env.spec();
    let mut buf = ReplayBuffer::new(steps.max(1), spec.state_dim, spec.action_dim);
    let mut env = env.clone();
    let mut s = env.reset(rng);
    let mut t = 0;
    for _ in 0..steps {
        let a = match policy {
            Some(p) if rng.random::<f64>() >= random_fraction => p.sample(&s, rng)?,
            _ => uniform_action(&spec.action_low, &spec.action_high, rng),
        };
        let r = env.step(&a)?;
        buf.push(&s, &a, r.reward, &r.next_state, r.done)?;
        t += 1;
        s = r.next_state;
        if r.done || t >= spec.max_episode_steps {
            s = env.reset(rng);
            t = 0;
        }
    }
    Ok(buf)
}

/// Conservative SAC on a fixed dataset for `config.steps` gradient updates.
/// Returns the critic and the policy trained alongside it.
pub fn train_offline_conservative<R: Rng + ?Sized>(
    dataset: &ReplayBuffer,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    config: &SacConfig,
    conservative: Conservative,
    rng: &mut R,
) -> Result<(CriticPair, GaussianPolicy)> {
    if dataset.is_empty() {
        return Err(Error::EmptyData("offline dataset"));
    }
    check_len("offline action bounds", dataset.action_dim(), action_low.len())?;
    let mut agent = SacAgent::new(dataset.state_dim(), action_low, action_high, config.clone(), rng)?;
    for _ in 0..config.steps {
        let batch = dataset.sample(config.batch_size, rng)?;
        agent.update_conservative(&batch, conservative, rng)?;
    }
    Ok((agent.critics, agent.policy))
}

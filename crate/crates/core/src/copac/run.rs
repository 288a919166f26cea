use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brain::{coproc_step, Brain};
use crate::envs::World;
use crate::error::{Error, Result};
use crate::harness::evaluate::{evaluate_coprocessor, EpisodeStats, EvalProtocol};
use crate::nn::{hstack, mse_fit, Activation, FeedforwardNet, FitOptions};
use crate::sac::{CriticPair, GaussianPolicy};

use super::model::{fit_brain_model, BrainModel, Experience, OnlineBuffer};
use super::recalib::{recalibrate_q, RecalibReport};
use super::select::{add_exploration_noise, sample_candidates, select_stimulation};
use super::CopacConfig;

/// Everything a CopAC run produces.
#[derive(Debug, Clone)]
pub struct CopacRun {
    pub stats: Vec<EpisodeStats>,
    pub model: BrainModel,
    pub critics: CriticPair,
    pub buffer: OnlineBuffer,
    pub recalibrations: Vec<RecalibReport>,
    /// True-brain queries made by the online loop.
    pub brain_queries: u64,
}

/// Seed for the candidate stream used during noise-free evaluation.
const EVAL_CANDIDATE_SEED: u64 = 0x00C0_FFEE;

fn episode_sigma(config: &CopacConfig, episode: usize) -> f64 {
    if config.episodes <= 1 {
        return config.explore_sigma_start;
    }
    let frac = (episode - 1) as f64 / (config.episodes - 1) as f64;
    config.explore_sigma_start + frac * (config.explore_sigma_end - config.explore_sigma_start)
}

/// Online coprocessor learning against a pretrained world critic.
///
/// Each episode: act on the true brain with Q-guided (or, with `q_max`
/// disabled, uniform) stimulations plus decaying exploration noise, refit the
/// brain model on everything seen so far, recalibrate the critic in the
/// simulated coprocessor MDP, then evaluate noise-free on a copy of the brain.
pub fn run_copac<B, R>(
    env: &World,
    brain: &B,
    world_critic: &CriticPair,
    config: &CopacConfig,
    eval: EvalProtocol,
    rng: &mut R,
) -> Result<CopacRun>
where
    B: Brain + Clone,
    R: Rng + ?Sized,
{
    let started = std::time::Instant::now();
    config.validate()?;
    let spec = env.spec();
    let (low, high) = (brain.stim_low().to_vec(), brain.stim_high().to_vec());
    let mut critics = world_critic.clone();
    let mut model = BrainModel::new(
        spec.state_dim,
        brain.stim_dim(),
        spec.action_low.clone(),
        spec.action_high.clone(),
        &config.model_hidden,
        rng,
    )?;
    let eval_brain = brain.clone();
    let queries_before = brain.queries();
    let mut buffer = OnlineBuffer::default();
    let mut recalibrations = Vec::new();
    let mut stats = Vec::with_capacity(config.episodes);
    let mut env = env.clone();

    for episode in 1..=config.episodes {
        let sigma = episode_sigma(config, episode);
        let mut state = env.reset(rng);
        let mut train_return = 0.0;
        for _ in 0..spec.max_episode_steps {
            let mut stim = if config.q_max_enabled {
                select_stimulation(&state, &model, &critics, config.candidates, &low, &high, rng)?.stimulation
            } else {
                sample_candidates(1, &low, &high, rng).row(0).to_vec()
            };
            if config.q_max_enabled {
                add_exploration_noise(&mut stim, sigma, &low, &high, rng);
            }
            let (action, r) = coproc_step(&mut env, brain, &stim)?;
            train_return += r.reward;
            buffer.push(Experience {
                state: state.clone(),
                stimulation: stim,
                action,
                reward: r.reward,
                next_state: r.next_state.clone(),
                done: r.done,
            });
            state = r.next_state;
            if r.done {
                break;
            }
        }
        fit_brain_model(&mut model, &buffer, config.fit_options(), rng)?;
        if config.q_update_enabled {
            recalibrations.push(recalibrate_q(
                &mut critics,
                &model,
                &env,
                &low,
                &high,
                config,
                sigma,
                rng,
            )?);
        }
        let mut cand_rng = ChaCha8Rng::seed_from_u64(EVAL_CANDIDATE_SEED);
        let eval_return = evaluate_coprocessor(&env, &eval_brain, eval, |s| {
            if config.q_max_enabled {
                Ok(select_stimulation(s, &model, &critics, config.candidates, &low, &high, &mut cand_rng)?.stimulation)
            } else {
                Ok(sample_candidates(1, &low, &high, &mut cand_rng).row(0).to_vec())
            }
        })?;
        stats.push(EpisodeStats {
            episode,
            train_return,
            eval_return,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(CopacRun {
        stats,
        model,
        critics,
        buffer,
        recalibrations,
        brain_queries: brain.queries() - queries_before,
    })
}

/// Learned inverse brain model: `(state ++ world action) -> stimulation`,
/// clipped to the stimulation box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseBrainModel {
    pub net: FeedforwardNet,
    pub stim_low: Vec<f64>,
    pub stim_high: Vec<f64>,
}

impl InverseBrainModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        stim_low: Vec<f64>,
        stim_high: Vec<f64>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(stim_low.len());
        let net = FeedforwardNet::new(&dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(InverseBrainModel {
            net,
            stim_low,
            stim_high,
        })
    }

    pub fn stimulation(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        let c = self.net.forward(&x)?;
        Ok(c.iter()
            .zip(self.stim_low.iter().zip(&self.stim_high))
            .map(|(c, (lo, hi))| c.clamp(*lo, *hi))
            .collect())
    }

    /// Fits `(s, a_true) -> a_c` on the buffer.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        buffer: &OnlineBuffer,
        options: FitOptions,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if buffer.is_empty() {
            return Err(Error::EmptyData("online buffer"));
        }
        let x = hstack(buffer.states().view(), buffer.actions().view());
        let y: Array2<f64> = buffer.stimulations();
        mse_fit(&mut self.net, x.view(), y.view(), options, rng)
    }
}

/// Inverse-model coprocessor: stimulate with `f_inv(s, pi(s))` plus
/// exploration noise, then fit `f_inv` on what the brain actually did.
pub fn run_inverse_baseline<B, R>(
    env: &World,
    brain: &B,
    world_policy: &GaussianPolicy,
    config: &CopacConfig,
    eval: EvalProtocol,
    rng: &mut R,
) -> Result<(Vec<EpisodeStats>, InverseBrainModel)>
where
    B: Brain + Clone,
    R: Rng + ?Sized,
{
    let started = std::time::Instant::now();
    config.validate()?;
    let spec = env.spec();
    let (low, high) = (brain.stim_low().to_vec(), brain.stim_high().to_vec());
    let mut inverse = InverseBrainModel::new(
        spec.state_dim,
        spec.action_dim,
        low.clone(),
        high.clone(),
        &config.model_hidden,
        rng,
    )?;
    let eval_brain = brain.clone();
    let mut buffer = OnlineBuffer::default();
    let mut stats = Vec::with_capacity(config.episodes);
    let mut env = env.clone();
    for episode in 1..=config.episodes {
        let sigma = episode_sigma(config, episode);
        let mut state = env.reset(rng);
        let mut train_return = 0.0;
        for _ in 0..spec.max_episode_steps {
            let target = world_policy.mean_action(&state)?;
            let mut stim = inverse.stimulation(&state, &target)?;
            add_exploration_noise(&mut stim, sigma, &low, &high, rng);
            let (action, r) = coproc_step(&mut env, brain, &stim)?;
            train_return += r.reward;
            buffer.push(Experience {
                state: state.clone(),
                stimulation: stim,
                action,
                reward: r.reward,
                next_state: r.next_state.clone(),
                done: r.done,
            });
            state = r.next_state;
            if r.done {
                break;
            }
        }
        inverse.fit(&buffer, config.fit_options(), rng)?;
        let eval_return = evaluate_coprocessor(&env, &eval_brain, eval, |s| {
            inverse.stimulation(s, &world_policy.mean_action(s)?)
        })?;
        stats.push(EpisodeStats {
            episode,
            train_return,
            eval_return,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((stats, inverse))
}

//! MBPO-lite: SAC on the stimulation space, with extra training data from
//! short branched rollouts of a learned dynamics ensemble.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brain::Brain;
use crate::envs::World;
use crate::error::{check_len, Error, Result};
use crate::harness::evaluate::{evaluate_coprocessor, EpisodeStats, EvalProtocol};
use crate::nn::{hstack, mse_fit, Activation, FeedforwardNet, FitOptions};
use crate::sac::{Batch, ReplayBuffer, SacAgent, SacConfig};

/// Predicted `(next_states, rewards, dones)` for `(state, stimulation)` rows.
pub trait DynamicsPredictor {
    fn predict<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        stims: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)>;
}

/// Deterministic ensemble predicting `(s' - s, r)`. Each row is served by a
/// uniformly chosen member. Never predicts termination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub members: Vec<FeedforwardNet>,
    state_dim: usize,
}

impl DynamicsModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        stim_dim: usize,
        ensemble: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if ensemble == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let mut dims = vec![state_dim + stim_dim];
        dims.extend_from_slice(hidden);
        dims.push(state_dim + 1);
        let members = (0..ensemble)
            .map(|_| FeedforwardNet::new(&dims, Activation::Relu, Activation::Identity, rng))
            .collect::<Result<_>>()?;
        Ok(DynamicsModel { members, state_dim })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Raw `(delta, reward)` prediction of one member.
    pub fn member_output(
        &self,
        member: usize,
        states: ArrayView2<'_, f64>,
        stims: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        check_len("dynamics rows", states.nrows(), stims.nrows())?;
        self.members[member].forward_batch(hstack(states, stims).view())
    }
}

impl DynamicsPredictor for DynamicsModel {
    fn predict<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        stims: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
        let n = states.nrows();
        let sd = self.state_dim;
        let outs = (0..self.members.len())
            .map(|m| self.member_output(m, states, stims))
            .collect::<Result<Vec<_>>>()?;
        let mut next = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        for i in 0..n {
            let m = rng.random_range(0..self.members.len());
            let row = outs[m].row(i);
            for k in 0..sd {
                next[[i, k]] = states[[i, k]] + row[k];
            }
            rewards[i] = row[sd];
        }
        if !next.iter().chain(rewards.iter()).all(|x| x.is_finite()) {
            return Err(Error::TrainingDivergence("non-finite dynamics prediction".into()));
        }
        Ok((next, rewards, Array1::zeros(n)))
    }
}

/// Adapts a hand-written transition function.
pub struct FnDynamics<F> {
    pub f: F,
}

impl<F: Fn(&[f64], &[f64]) -> (Vec<f64>, f64, bool)> DynamicsPredictor for FnDynamics<F> {
    fn predict<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        stims: ArrayView2<'_, f64>,
        _rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
        let n = states.nrows();
        let mut next = Array2::zeros((n, states.ncols()));
        let mut rewards = Array1::zeros(n);
        let mut dones = Array1::zeros(n);
        for i in 0..n {
            let (s2, r, d) = (self.f)(&states.row(i).to_vec(), &stims.row(i).to_vec());
            next.row_mut(i).assign(&ndarray::ArrayView1::from(&s2));
            rewards[i] = r;
            dones[i] = if d { 1.0 } else { 0.0 };
        }
        Ok((next, rewards, dones))
    }
}

/// Trains every member on its own bootstrap resample of the buffer.
/// Returns each member's final-epoch loss.
pub fn fit_dynamics<R: Rng + ?Sized>(
    model: &mut DynamicsModel,
    buffer: &ReplayBuffer,
    options: FitOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::EmptyData("dynamics buffer"));
    }
    let all = buffer.all();
    let sd = model.state_dim;
    let x = hstack(all.states.view(), all.actions.view());
    let mut y = Array2::zeros((all.len(), sd + 1));
    y.slice_mut(s![.., ..sd]).assign(&(&all.next_states - &all.states));
    y.column_mut(sd).assign(&all.rewards);
    let n = all.len();
    let mut finals = Vec::with_capacity(model.members.len());
    for member in model.members.iter_mut() {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let xb = x.select(Axis(0), &idx);
        let yb = y.select(Axis(0), &idx);
        let trace = mse_fit(member, xb.view(), yb.view(), options, rng)?;
        finals.push(*trace.last().expect("at least one epoch"));
    }
    Ok(finals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MbpoConfig {
    /// Model rollout length, grown linearly from start to end over the
    /// episodes.
    pub rollout_horizon_start: usize,
    pub rollout_horizon_end: usize,
    pub ensemble_size: usize,
    pub model_hidden: Vec<usize>,
    pub model_epochs: usize,
    pub model_lr: f64,
    /// Refit the ensemble every this many real steps.
    pub fit_every: usize,
    /// Fraction of each SAC batch drawn from real data.
    pub real_ratio: f64,
    /// Model rollouts branched per real step.
    pub branches_per_step: usize,
    pub model_buffer_capacity: usize,
}

impl Default for MbpoConfig {
    fn default() -> Self {
        MbpoConfig {
            rollout_horizon_start: 1,
            rollout_horizon_end: 3,
            ensemble_size: 4,
            model_hidden: vec![64, 64],
            model_epochs: 10,
            model_lr: 1e-3,
            fit_every: 250,
            real_ratio: 0.5,
            branches_per_step: 8,
            model_buffer_capacity: 20_000,
        }
    }
}

impl MbpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollout_horizon_start == 0 || self.rollout_horizon_end < self.rollout_horizon_start {
            return Err(Error::Config("rollout horizons must satisfy 1 <= start <= end".into()));
        }
        if !(self.real_ratio > 0.0 && self.real_ratio <= 1.0) {
            return Err(Error::Config("real_ratio must lie in (0, 1]".into()));
        }
        if self.ensemble_size == 0 || self.model_epochs == 0 || self.fit_every == 0 || !(self.model_lr > 0.0) {
            return Err(Error::Config(
                "ensemble size, epochs, fit interval and model lr must be positive".into(),
            ));
        }
        Ok(())
    }

    fn model_free(&self) -> bool {
        self.branches_per_step == 0 || self.real_ratio >= 1.0
    }

    fn horizon(&self, episode: usize, episodes: usize) -> usize {
        if episodes <= 1 {
            return self.rollout_horizon_start;
        }
        let frac = (episode - 1) as f64 / (episodes - 1) as f64;
        let h =
            self.rollout_horizon_start as f64 + frac * (self.rollout_horizon_end - self.rollout_horizon_start) as f64;
        h.round() as usize
    }
}

/// Where model rollouts come from.
pub enum ModelSource<'a, P> {
    /// Fit a fresh ensemble on real data as it arrives.
    Learned,
    /// Use a fixed, externally supplied model.
    Fixed(&'a P),
}

#[derive(Debug, Clone)]
pub struct MbpoRun {
    pub stats: Vec<EpisodeStats>,
    pub brain_queries: u64,
    pub model_transitions: usize,
}

/// MBPO-lite on the coprocessor MDP. With `real_ratio = 1` or no branches
/// it performs exactly the model-free SAC baseline's computation.
#[allow(clippy::too_many_arguments)]
pub fn run_mbpo<B, P, R>(
    env: &World,
    brain: &B,
    episodes: usize,
    sac: &SacConfig,
    mbpo: &MbpoConfig,
    source: ModelSource<'_, P>,
    eval: EvalProtocol,
    rng: &mut R,
) -> Result<MbpoRun>
where
    B: Brain + Clone,
    P: DynamicsPredictor,
    R: Rng + ?Sized,
{
    let started = std::time::Instant::now();
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    mbpo.validate()?;
    let spec = env.spec();
    let (low, high) = (brain.stim_low().to_vec(), brain.stim_high().to_vec());
    let mut agent = SacAgent::new(spec.state_dim, low.clone(), high.clone(), sac.clone(), rng)?;
    let mut real = ReplayBuffer::new(sac.buffer_capacity, spec.state_dim, brain.stim_dim());
    let model_free = mbpo.model_free();
    let mut learned = match (&source, model_free) {
        (ModelSource::Learned, false) => Some(DynamicsModel::new(
            spec.state_dim,
            brain.stim_dim(),
            mbpo.ensemble_size,
            &mbpo.model_hidden,
            rng,
        )?),
        _ => None,
    };
    let mut synthetic = ReplayBuffer::new(mbpo.model_buffer_capacity.max(1), spec.state_dim, brain.stim_dim());
    let mut model_ready = matches!(source, ModelSource::Fixed(_));
    let fit_options = FitOptions {
        epochs: mbpo.model_epochs,
        lr: mbpo.model_lr,
        batch_size: None,
    };
    let eval_brain = brain.clone();
    let queries_before = brain.queries();
    let mut env = env.clone();
    let mut total_steps = 0usize;
    let mut model_transitions = 0usize;
    let mut stats = Vec::with_capacity(episodes);

    for episode in 1..=episodes {
        let horizon = mbpo.horizon(episode, episodes);
        let mut state = env.reset(rng);
        let mut train_return = 0.0;
        for _ in 0..spec.max_episode_steps {
            let stim = if total_steps < sac.start_steps {
                low.iter().zip(&high).map(|(l, h)| rng.random_range(*l..=*h)).collect()
            } else {
                agent.policy.sample(&state, rng)?
            };
            let action = brain.act(&state, &stim)?;
            let r = env.step(&action)?;
            real.push(&state, &stim, r.reward, &r.next_state, r.done)?;
            train_return += r.reward;
            state = r.next_state;
            total_steps += 1;

            if !model_free {
                if let Some(model) = learned.as_mut() {
                    if total_steps.is_multiple_of(mbpo.fit_every) {
                        fit_dynamics(model, &real, fit_options, rng)?;
                        model_ready = true;
                    }
                }
            }
            if total_steps >= sac.start_steps {
                if !model_free && model_ready {
                    model_transitions += match (&source, learned.as_ref()) {
                        (ModelSource::Fixed(p), _) => branch(*p, &agent, &real, &mut synthetic, mbpo, horizon, rng)?,
                        (ModelSource::Learned, Some(m)) => {
                            branch(m, &agent, &real, &mut synthetic, mbpo, horizon, rng)?
                        }
                        _ => 0,
                    };
                }
                for _ in 0..sac.updates_per_step {
                    let batch = if model_free || synthetic.is_empty() {
                        real.sample(sac.batch_size, rng)?
                    } else {
                        let n_real = ((mbpo.real_ratio * sac.batch_size as f64).round() as usize).max(1);
                        let a = real.sample(n_real, rng)?;
                        let b = synthetic.sample(sac.batch_size.saturating_sub(n_real).max(1), rng)?;
                        Batch::concat(&a, &b)
                    };
                    agent.update(&batch, rng)?;
                }
            }
            if r.done {
                break;
            }
        }
        let eval_return = evaluate_coprocessor(&env, &eval_brain, eval, |s| agent.policy.mean_action(s))?;
        stats.push(EpisodeStats {
            episode,
            train_return,
            eval_return,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(MbpoRun {
        stats,
        brain_queries: brain.queries() - queries_before,
        model_transitions,
    })
}

/// Branched rollouts of length `horizon` from random real states, acting
/// with the current policy. Touches neither the true brain nor the world.
fn branch<P, R>(
    model: &P,
    agent: &SacAgent,
    real: &ReplayBuffer,
    synthetic: &mut ReplayBuffer,
    mbpo: &MbpoConfig,
    horizon: usize,
    rng: &mut R,
) -> Result<usize>
where
    P: DynamicsPredictor + ?Sized,
    R: Rng + ?Sized,
{
    let starts = real.sample(mbpo.branches_per_step, rng)?;
    let mut states = starts.states;
    let mut alive: Vec<bool> = vec![true; states.nrows()];
    let mut added = 0;
    for _ in 0..horizon {
        let noise = agent.policy.draw_noise(states.nrows(), rng);
        let stims = agent.policy.sample_with_noise(states.view(), noise)?.actions;
        let (next, rewards, dones) = model.predict(states.view(), stims.view(), rng)?;
        for i in 0..states.nrows() {
            if alive[i] {
                let done = dones[i] > 0.5;
                synthetic.push(
                    states.row(i).as_slice().expect("row"),
                    stims.row(i).as_slice().expect("row"),
                    rewards[i],
                    next.row(i).as_slice().expect("row"),
                    done,
                )?;
                added += 1;
                alive[i] = !done;
            }
        }
        states = next;
    }
    Ok(added)
}

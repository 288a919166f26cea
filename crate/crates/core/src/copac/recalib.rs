use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::envs::World;
use crate::error::{Error, Result};
use crate::nn::{adam_update, AdamState};
use crate::sac::{CriticPair, ReplayBuffer};

use super::model::ActionPredictor;
use super::select::{add_exploration_noise, sample_candidates, select_stimulation};
use super::CopacConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RecalibReport {
    pub simulated_steps: usize,
    pub updates: usize,
    /// Mean |TD residual| of the last update (before it was applied).
    pub final_residual: f64,
    pub converged: bool,
}

/// Rolls the stimulation policy out in the simulated coprocessor MDP, where
/// the world is stepped with `f_hat(s, a_c)`, and records
/// `(s, f_hat(s, a_c), r, s', done)`.
pub fn simulate_rollouts<P, R>(
    critics: &CriticPair,
    model: &P,
    env: &World,
    low: &[f64],
    high: &[f64],
    config: &CopacConfig,
    sigma: f64,
    rng: &mut R,
) -> Result<ReplayBuffer>
where
    P: ActionPredictor + ?Sized,
    R: Rng + ?Sized,
{
    let steps = env.max_episode_steps();
    let mut buf = ReplayBuffer::new(
        (config.recalib_rollouts * steps).max(1),
        env.state_dim(),
        model.action_dim(),
    );
    let mut env = env.clone();
    for _ in 0..config.recalib_rollouts {
        let mut s = env.reset(rng);
        for _ in 0..steps {
            let mut stim = if config.q_max_enabled {
                select_stimulation(&s, model, critics, config.candidates, low, high, rng)?.stimulation
            } else {
                sample_candidates(1, low, high, rng).row(0).to_vec()
            };
            add_exploration_noise(&mut stim, sigma, low, high, rng);
            let a = model.predict(&s, &stim)?;
            let r = env.step(&a)?;
            buf.push(&s, &a, r.reward, &r.next_state, r.done)?;
            s = r.next_state;
            if r.done {
                break;
            }
        }
    }
    Ok(buf)
}

/// TD targets `r + gamma (1 - done) max_j min target Q(s', f_hat(s', c_j))`
/// over `k` fresh uniform candidates per row.
pub fn realizable_targets<P, R>(
    critics: &CriticPair,
    model: &P,
    rewards: &Array1<f64>,
    next_states: &Array2<f64>,
    dones: &Array1<f64>,
    gamma: f64,
    k: usize,
    low: &[f64],
    high: &[f64],
    rng: &mut R,
) -> Result<Array1<f64>>
where
    P: ActionPredictor + ?Sized,
    R: Rng + ?Sized,
{
    let n = rewards.len();
    let rows: Vec<usize> = (0..n * k).map(|j| j / k).collect();
    let s2 = next_states.select(Axis(0), &rows);
    let cands = sample_candidates(n * k, low, high, rng);
    let a2 = model.predict_batch(s2.view(), cands.view())?;
    let q = critics.min_target(s2.view(), a2.view())?;
    let targets: Array1<f64> = (0..n)
        .map(|i| {
            let best = q
                .slice(ndarray::s![i * k..(i + 1) * k])
                .fold(f64::MIN, |a, &b| a.max(b));
            rewards[i] + gamma * (1.0 - dones[i]) * best
        })
        .collect();
    if !targets.iter().all(|t| t.is_finite()) {
        return Err(Error::TrainingDivergence("non-finite recalibration target".into()));
    }
    Ok(targets)
}

/// Recalibrates both critics toward values of actions the brain model says
/// are realizable. The true brain is never consulted. Stops once the mean
/// |TD residual| plus the mean online/target gap drops below
/// `convergence_tol`, or after `recalib_updates`. The gap term keeps a
/// lagging target from passing as convergence.
pub fn recalibrate_q<P, R>(
    critics: &mut CriticPair,
    model: &P,
    env: &World,
    low: &[f64],
    high: &[f64],
    config: &CopacConfig,
    sigma: f64,
    rng: &mut R,
) -> Result<RecalibReport>
where
    P: ActionPredictor + ?Sized,
    R: Rng + ?Sized,
{
    if !config.q_update_enabled {
        return Ok(RecalibReport {
            simulated_steps: 0,
            updates: 0,
            final_residual: f64::NAN,
            converged: false,
        });
    }
    let gamma = env.spec().gamma;
    let buf = simulate_rollouts(critics, model, env, low, high, config, sigma, rng)?;
    let mut opt1 = AdamState::for_net(&critics.q1);
    let mut opt2 = AdamState::for_net(&critics.q2);
    let saved_tau = critics.tau;
    critics.tau = config.recalib_tau;
    let mut report = RecalibReport {
        simulated_steps: buf.len(),
        updates: 0,
        final_residual: f64::INFINITY,
        converged: false,
    };
    let result = (|| -> Result<()> {
        for _ in 0..config.recalib_updates {
            let batch = buf.sample(config.recalib_batch, rng)?;
            let y = realizable_targets(
                critics,
                model,
                &batch.rewards,
                &batch.next_states,
                &batch.dones,
                gamma,
                config.target_candidates,
                low,
                high,
                rng,
            )?;
            let x = CriticPair::input(batch.states.view(), batch.actions.view())?;
            let n = y.len() as f64;
            let mut residual = 0.0;
            let mut grads = Vec::with_capacity(2);
            for (net, target) in [(&critics.q1, &critics.q1_target), (&critics.q2, &critics.q2_target)] {
                let cache = net.forward_cached(x.view())?;
                let diff = &cache.output().column(0) - &y;
                residual += diff.mapv(f64::abs).sum() / (2.0 * n);
                let lag = &cache.output().column(0) - &target.forward_batch(x.view())?.column(0);
                residual += lag.mapv(f64::abs).sum() / (2.0 * n);
                let g = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
                grads.push(net.backward(&cache, g.view())?.0);
            }
            report.final_residual = residual;
            if residual < config.convergence_tol {
                report.converged = true;
                break;
            }
            adam_update(&mut critics.q1, &grads[0], &mut opt1, config.recalib_lr)?;
            adam_update(&mut critics.q2, &grads[1], &mut opt2, config.recalib_lr)?;
            critics.soft_update();
            report.updates += 1;
        }
        Ok(())
    })();
    critics.tau = saved_tau;
    result?;
    if !critics.is_finite() {
        return Err(Error::TrainingDivergence("critic diverged during recalibration".into()));
    }
    Ok(report)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brain::Brain;
use crate::envs::World;
use crate::error::{Error, Result};

/// How evaluation rollouts are seeded. Episode `i` resets with
/// `seed + i`, so every method sees the same initial states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            episodes: 5,
            seed: 1_000_003,
        }
    }
}

/// Returns recorded after one online episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    /// 1-based.
    pub episode: usize,
    pub train_return: f64,
    pub eval_return: f64,
    /// Seconds since the run started, taken after evaluation.
    pub elapsed_s: f64,
}

/// Runs one episode from a reset seeded with `seed` and returns its
/// undiscounted return.
pub fn run_episode<F>(env: &mut World, seed: u64, mut policy: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.reset(&mut rng);
    let mut total = 0.0;
    for _ in 0..env.max_episode_steps() {
        let action = policy(&state)?;
        let step = env.step(&action)?;
        total += step.reward;
        state = step.next_state;
        if step.done {
            break;
        }
    }
    Ok(total)
}

/// Mean return of a deterministic state-to-action policy over
/// `protocol.episodes` seeded rollouts on copies of `env`.
pub fn evaluate_policy<F>(env: &World, protocol: EvalProtocol, mut policy: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if protocol.episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut sum = 0.0;
    for i in 0..protocol.episodes {
        let mut e = env.clone();
        sum += run_episode(&mut e, protocol.seed.wrapping_add(i as u64), &mut policy)?;
    }
    Ok(sum / protocol.episodes as f64)
}

/// [`evaluate_policy`] for a stimulation policy acting through `brain`.
pub fn evaluate_coprocessor<B, F>(env: &World, brain: &B, protocol: EvalProtocol, mut stim_policy: F) -> Result<f64>
where
    B: Brain + ?Sized,
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    evaluate_policy(env, protocol, |s| {
        let stim = stim_policy(s)?;
        brain.act(s, &stim)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_episode_mean_is_that_return() {
        let env = World::by_name("chain").unwrap();
        let p = EvalProtocol { episodes: 1, seed: 0 };
        let mean = evaluate_policy(&env, p, |_| Ok(vec![1.0])).unwrap();
        assert_eq!(mean, 1.0);
        let left = evaluate_policy(&env, p, |_| Ok(vec![-1.0])).unwrap();
        assert_eq!(left, 0.0);
    }

    #[test]
    fn seeded_means_repeat() {
        let env = World::by_name("pendulum").unwrap();
        let p = EvalProtocol::default();
        let a = evaluate_policy(&env, p, |s| Ok(vec![-s[1]])).unwrap();
        let b = evaluate_policy(&env, p, |s| Ok(vec![-s[1]])).unwrap();
        assert_eq!(a, b);
        assert!(evaluate_policy(&env, EvalProtocol { episodes: 0, seed: 0 }, |_| Ok(vec![0.0])).is_err());
    }
}

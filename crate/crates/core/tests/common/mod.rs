#![allow(dead_code)]

use copac_core::copac::CopacConfig;
use copac_core::envs::{Tabular, World};
use copac_core::nn::{Activation, FeedforwardNet};
use copac_core::sac::{train_world, SacConfig, WorldTraining};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-component relative error between two gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n, floor))
        .fold(0.0, f64::max)
}

/// SAC settings that learn the 5-state chain: no entropy bonus, so the
/// critic estimates the optimal values.
pub fn chain_sac() -> SacConfig {
    SacConfig {
        gamma: 0.9,
        alpha: 0.0,
        tau: 0.01,
        lr_actor: 1e-3,
        lr_critic: 1e-3,
        batch_size: 64,
        steps: 6000,
        start_steps: 1000,
        ..SacConfig::default()
    }
}

pub fn train_chain(seed: u64) -> WorldTraining {
    let env = World::by_name("chain").unwrap();
    train_world(&env, &chain_sac(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Chain actions: negative means left.
pub const LEFT: f64 = -1.0;
pub const RIGHT: f64 = 1.0;

pub fn chain() -> (World, Tabular) {
    let w = World::by_name("chain").unwrap();
    let t = w.as_tabular().unwrap().clone();
    (w, t)
}

/// Recalibration settings for tabular problems: faster targets and a tight
/// stopping rule.
pub fn tabular_recalib() -> CopacConfig {
    CopacConfig {
        recalib_rollouts: 2,
        recalib_updates: 4000,
        convergence_tol: 1e-5,
        recalib_batch: 32,
        target_candidates: 8,
        recalib_lr: 3e-3,
        recalib_tau: 0.05,
        candidates: 16,
        ..CopacConfig::default()
    }
}

/// A small random net with random parameters, a batch of inputs and an
/// upstream gradient for the weighted output sum.
pub fn random_net(seed: u64) -> (FeedforwardNet, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..4);
    let mut dims = vec![rng.random_range(1..5)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..7));
    }
    let hidden = [Activation::Tanh, Activation::Relu][rng.random_range(0..2)];
    let out = [Activation::Identity, Activation::Tanh][rng.random_range(0..2)];
    let mut net = FeedforwardNet::new(&dims, hidden, out, &mut rng).unwrap();
    // Zero biases would park ReLU pre-activations exactly on the kink.
    let theta: Vec<f64> = net.flat_params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_flat_params(&theta).unwrap();
    let batch = rng.random_range(1..4);
    let x = Array2::from_shape_simple_fn((batch, dims[0]), || rng.random_range(-2.0..2.0));
    let g = Array2::from_shape_simple_fn((batch, *dims.last().unwrap()), || rng.random_range(-1.0..1.0));
    (net, x, g)
}

pub fn weighted_output(net: &FeedforwardNet, x: &Array2<f64>, g: &Array2<f64>) -> f64 {
    (&net.forward_batch(x.view()).unwrap() * g).sum()
}

mod common;

use common::{central_diff, max_rel_err, random_net, weighted_output};
use copac_core::sac::{actor_loss_grads, critic_loss_grads, Batch, Conservative, CriticPair, GaussianPolicy};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parameter_gradients_match_finite_differences(seed in any::<u64>()) {
        let (net, x, g) = random_net(seed);
        let cache = net.forward_cached(x.view()).unwrap();
        let (grads, _) = net.backward(&cache, g.view()).unwrap();
        let theta = net.flat_params();
        let mut probe = net.clone();
        let numeric = central_diff(|p| {
            probe.set_flat_params(p).unwrap();
            weighted_output(&probe, &x, &g)
        }, &theta, H);
        prop_assert!(max_rel_err(&grads.flatten(), &numeric, 1e-4) < 1e-4);
    }

    #[test]
    fn input_gradients_match_finite_differences(seed in any::<u64>()) {
        let (net, x, g) = random_net(seed);
        let cache = net.forward_cached(x.view()).unwrap();
        let (_, dx) = net.backward(&cache, g.view()).unwrap();
        let flat: Vec<f64> = x.iter().copied().collect();
        let numeric = central_diff(|p| {
            let xp = Array2::from_shape_vec(x.raw_dim(), p.to_vec()).unwrap();
            weighted_output(&net, &xp, &g)
        }, &flat, H);
        let analytic: Vec<f64> = dx.iter().copied().collect();
        prop_assert!(max_rel_err(&analytic, &numeric, 1e-4) < 1e-4);
    }
}

struct SacFixture {
    critics: CriticPair,
    policy: GaussianPolicy,
    batch: Batch,
    next_noise: Array2<f64>,
    noise: Array2<f64>,
    uniform: Array2<f64>,
}

fn sac_fixture(seed: u64) -> SacFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sd, n) = (3, 6);
    let low = vec![-2.0, -1.0];
    let high = vec![2.0, 0.5];
    let mut critics = CriticPair::new(sd, 2, &[8, 8], 0.05, &mut rng).unwrap();
    for net in [&mut critics.q1, &mut critics.q2] {
        let theta: Vec<f64> = net.flat_params().iter().map(|_| rng.random_range(-0.5..0.5)).collect();
        net.set_flat_params(&theta).unwrap();
    }
    let mut policy = GaussianPolicy::new(sd, low.clone(), high.clone(), &[8], &mut rng).unwrap();
    // Shrink the policy so log-std stays inside the clamp range.
    let small: Vec<f64> = policy.net.flat_params().iter().map(|p| 0.3 * p).collect();
    policy.net.set_flat_params(&small).unwrap();
    let batch = Batch {
        states: Array2::from_shape_simple_fn((n, sd), || rng.random_range(-1.0..1.0)),
        actions: Array2::from_shape_fn((n, 2), |(_, k)| rng.random_range(low[k]..high[k])),
        rewards: Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0)),
        next_states: Array2::from_shape_simple_fn((n, sd), || rng.random_range(-1.0..1.0)),
        dones: Array1::from_shape_fn(n, |i| if i == 0 { 1.0 } else { 0.0 }),
    };
    let next_noise = policy.draw_noise(n, &mut rng);
    let noise = policy.draw_noise(n, &mut rng);
    let samples = 4;
    let uniform = Array2::from_shape_fn((n * samples, 2), |(_, k)| rng.random_range(low[k]..high[k]));
    SacFixture {
        critics,
        policy,
        batch,
        next_noise,
        noise,
        uniform,
    }
}

#[test]
fn critic_loss_gradients_match_finite_differences() {
    for seed in 0..10 {
        let f = sac_fixture(seed);
        for conservative in [
            None,
            Some(Conservative {
                weight: 0.7,
                samples: 4,
            }),
        ] {
            let cq = conservative.map(|c| (c, f.uniform.view()));
            let step = critic_loss_grads(&f.critics, &f.policy, &f.batch, f.next_noise.clone(), 0.99, 0.2, cq).unwrap();
            for head in 0..2 {
                let theta = if head == 0 {
                    f.critics.q1.flat_params()
                } else {
                    f.critics.q2.flat_params()
                };
                let mut probe = f.critics.clone();
                let numeric = central_diff(
                    |p| {
                        let net = if head == 0 { &mut probe.q1 } else { &mut probe.q2 };
                        net.set_flat_params(p).unwrap();
                        let cq = conservative.map(|c| (c, f.uniform.view()));
                        critic_loss_grads(&probe, &f.policy, &f.batch, f.next_noise.clone(), 0.99, 0.2, cq)
                            .unwrap()
                            .loss[head]
                    },
                    &theta,
                    H,
                );
                let err = max_rel_err(&step.grads[head].flatten(), &numeric, 1e-3);
                assert!(
                    err < 1e-3,
                    "seed {seed} head {head} conservative {conservative:?}: {err}"
                );
            }
        }
    }
}

#[test]
fn actor_loss_gradients_match_finite_differences() {
    for seed in 0..10 {
        let f = sac_fixture(seed);
        let states = f.batch.states.view();
        let (_, grads) = actor_loss_grads(&f.policy, &f.critics, states, f.noise.clone(), 0.2).unwrap();
        let theta = f.policy.net.flat_params();
        let mut probe = f.policy.clone();
        let numeric = central_diff(
            |p| {
                probe.net.set_flat_params(p).unwrap();
                actor_loss_grads(&probe, &f.critics, states, f.noise.clone(), 0.2)
                    .unwrap()
                    .0
            },
            &theta,
            H,
        );
        let err = max_rel_err(&grads.flatten(), &numeric, 1e-3);
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

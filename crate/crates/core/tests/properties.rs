use copac_core::brain::{Brain, HealthyBrain, InjuredBrain, LesionMask, StimulationSites};
use copac_core::copac::{add_exploration_noise, sample_candidates, score_candidates, ActionPredictor, BrainModel};
use copac_core::envs::World;
use copac_core::harness::checkpoint::{from_json, to_json, Artifact};
use copac_core::harness::records::format_sig6;
use copac_core::nn::{Activation, FeedforwardNet};
use copac_core::sac::{ActionValue, CriticPair, FnValue, GaussianPolicy, ReplayBuffer};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pendulum_pair(seed: u64) -> (BrainModel, CriticPair) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = BrainModel::new(3, 4, vec![-2.0], vec![2.0], &[16, 8], &mut rng).unwrap();
    let critic = CriticPair::new(3, 1, &[16, 16], 0.005, &mut rng).unwrap();
    (model, critic)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chosen_candidate_dominates_every_candidate(seed in any::<u64>(), n in 1usize..64) {
        let (model, critic) = pendulum_pair(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let state: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cands = sample_candidates(n, &[-3.0; 4], &[3.0; 4], &mut rng);
        let (best, values) = score_candidates(&state, cands.view(), &model, &critic).unwrap();
        for (i, c) in cands.rows().into_iter().enumerate() {
            let q = critic.q(&state, &model.predict(&state, &c.to_vec()).unwrap()).unwrap();
            prop_assert!(values[best] >= q, "candidate {i}");
        }
    }

    #[test]
    fn positive_rescaling_keeps_the_argmax(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let (model, critic) = pendulum_pair(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let state: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cands = sample_candidates(128, &[-3.0; 4], &[3.0; 4], &mut rng);
        let scaled = FnValue { state_dim: 3, action_dim: 1, f: |s: &[f64], a: &[f64]| scale * critic.q(s, a).unwrap() };
        let (i, _) = score_candidates(&state, cands.view(), &model, &critic).unwrap();
        let (j, _) = score_candidates(&state, cands.view(), &model, &scaled).unwrap();
        prop_assert_eq!(i, j);
    }

    #[test]
    fn exploration_noise_stays_in_the_box(seed in any::<u64>(), sigma in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let low = [-3.0, 0.0, -0.5];
        let high = [3.0, 1.0, 0.5];
        let mut stim: Vec<f64> = (0..3).map(|k| rng.random_range(low[k]..=high[k])).collect();
        add_exploration_noise(&mut stim, sigma, &low, &high, &mut rng);
        for k in 0..3 {
            prop_assert!(stim[k] >= low[k] && stim[k] <= high[k]);
        }
    }

    #[test]
    fn policy_actions_respect_bounds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GaussianPolicy::new(4, vec![-2.0, 0.0], vec![2.0, 3.0], &[8], &mut rng).unwrap();
        let states = Array2::from_shape_simple_fn((64, 4), || rng.random_range(-10.0..10.0));
        let noise = p.draw_noise(64, &mut rng) * 10.0;
        let s = p.sample_with_noise(states.view(), noise).unwrap();
        for row in s.actions.rows() {
            prop_assert!((-2.0..=2.0).contains(&row[0]) && (0.0..=3.0).contains(&row[1]));
        }
        prop_assert!(s.log_prob.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn lesion_zeroes_the_requested_count(seed in any::<u64>(), fraction in 0.0f64..=1.0) {
        let healthy = HealthyBrain::random(World::by_name("pendulum").unwrap().spec(), seed).unwrap();
        let mask = LesionMask::sample(&healthy.policy_net, fraction, 1, seed).unwrap();
        prop_assert_eq!(mask.zeroed_entries.len(), (fraction * 4096.0).round() as usize);
        let brain = InjuredBrain::lesion(&healthy, fraction, 1, 8, 3.0, seed).unwrap();
        let w = &brain.effective_net().weights()[1];
        for &(r, c) in &brain.mask().zeroed_entries {
            prop_assert_eq!(w[[r, c]], 0.0);
        }
        let zeros = w.iter().filter(|x| **x == 0.0).count();
        prop_assert_eq!(zeros, mask.zeroed_entries.len());
    }

    #[test]
    fn stimulation_sites_are_distinct(seed in any::<u64>(), dim in 1usize..=64) {
        let sites = StimulationSites::sample(64, 2, dim, 3.0, seed).unwrap();
        let mut idx = sites.neuron_indices.clone();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), dim);
        prop_assert!(idx.iter().all(|&i| i < 64));
    }

    #[test]
    fn injured_actions_stay_in_bounds(seed in any::<u64>(), fraction in 0.0f64..=1.0) {
        let spec = World::by_name("reacher").unwrap().spec();
        let healthy = HealthyBrain::random(spec.clone(), seed).unwrap();
        let brain = InjuredBrain::with_defaults(&healthy, fraction, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..spec.state_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = brain.act(&s, &c).unwrap();
        for (k, x) in a.iter().enumerate() {
            prop_assert!(*x >= spec.action_low[k] && *x <= spec.action_high[k]);
        }
    }

    #[test]
    fn replay_samples_come_from_the_buffer(seed in any::<u64>(), pushes in 1usize..50, bs in 1usize..64) {
        let mut buf = ReplayBuffer::new(20, 1, 1);
        for i in 0..pushes {
            let x = i as f64;
            buf.push(&[x], &[-x], x, &[x + 1.0], false).unwrap();
        }
        let batch = buf.sample(bs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(batch.len(), bs.min(buf.len()));
        let oldest = pushes.saturating_sub(20) as f64;
        for i in 0..batch.len() {
            let r = batch.rewards[i];
            prop_assert!(r >= oldest && r < pushes as f64);
            prop_assert_eq!(batch.states[[i, 0]], r);
            prop_assert_eq!(batch.actions[[i, 0]], -r);
        }
    }

    #[test]
    fn sig6_keeps_six_digits(x in -1e9f64..1e9) {
        let back: f64 = format_sig6(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-6 * x.abs() + 1e-300);
    }

    #[test]
    fn net_checkpoints_round_trip_bit_exactly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..rng.random_range(2..5)).map(|_| rng.random_range(1..9)).collect();
        let mut net = FeedforwardNet::new(&dims, Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        // Include values that stress decimal round-tripping.
        let mut theta = net.flat_params();
        theta[0] = f64::MIN_POSITIVE;
        if theta.len() > 1 {
            theta[1] = 0.1 + 0.2;
        }
        net.set_flat_params(&theta).unwrap();
        let artifact = Artifact::Net { net: net.clone() };
        let back = from_json(&to_json(&artifact), "mem").unwrap();
        match back {
            Artifact::Net { net: loaded } => {
                let a: Vec<u64> = net.flat_params().iter().map(|x| x.to_bits()).collect();
                let b: Vec<u64> = loaded.flat_params().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(a, b);
                prop_assert_eq!(loaded.layer_dims(), net.layer_dims());
            }
            other => prop_assert!(false, "wrong kind {}", other.kind()),
        }
    }
}

mod common;

use std::sync::OnceLock;

use common::{chain, chain_sac, tabular_recalib, train_chain, LEFT, RIGHT};
use copac_core::baselines::{
    fit_dynamics, run_mbpo, DynamicsModel, DynamicsPredictor, FnDynamics, MbpoConfig, ModelSource,
};
use copac_core::brain::{Brain, LinearBrain, TableBrain};
use copac_core::copac::{
    fit_brain_model, recalibrate_q, run_copac, sample_candidates, select_stimulation, ActionPredictor, BrainModel,
    CopacConfig, Experience, FnPredictor, InverseBrainModel, OnlineBuffer,
};
use copac_core::envs::{exact_q, Tabular, World};
use copac_core::harness::EvalProtocol;
use copac_core::nn::FitOptions;
use copac_core::sac::{
    collect_dataset, sac_coproc_baseline, train_offline_conservative, ActionValue, Conservative, CriticPair, FnValue,
    ReplayBuffer, SacConfig, WorldTraining,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain_world() -> &'static WorldTraining {
    static W: OnceLock<WorldTraining> = OnceLock::new();
    W.get_or_init(|| train_chain(0))
}

#[test]
fn world_critic_on_chain_matches_value_iteration() {
    let (_, tab) = chain();
    let exact = exact_q(&tab, &[Tabular::LEFT, Tabular::RIGHT], tab.gamma(), 1e-12).unwrap();
    let critics = &chain_world().critics;
    for s in 0..4 {
        let o = tab.one_hot(s);
        let (l, r) = (critics.q(&o, &[LEFT]).unwrap(), critics.q(&o, &[RIGHT]).unwrap());
        let greedy = if r > l { Tabular::RIGHT } else { Tabular::LEFT };
        assert_eq!(greedy, exact.greedy(s), "state {s}");
        for (q, a) in [(l, Tabular::LEFT), (r, Tabular::RIGHT)] {
            let want = exact.q(s, a);
            assert!((q - want).abs() <= 0.05 * want, "Q({s},{a}) = {q}, exact {want}");
        }
    }
}

#[test]
fn single_state_recalibration_converges_to_geometric_sum() {
    let env = World::by_name("self_loop").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut critics = CriticPair::new(1, 1, &[16, 16], 0.005, &mut rng).unwrap();
    let sole = FnPredictor {
        stim_dim: 1,
        action_dim: 1,
        f: |_: &[f64], _: &[f64]| vec![0.0],
    };
    let report = recalibrate_q(
        &mut critics,
        &sole,
        &env,
        &[-1.0],
        &[1.0],
        &tabular_recalib(),
        0.1,
        &mut rng,
    )
    .unwrap();
    let q = critics.q(&[1.0], &[0.0]).unwrap();
    assert!((q - 10.0).abs() < 0.2, "Q = {q}, report {report:?}");
}

#[test]
fn recalibration_removes_unrealizable_optimism() {
    let (env, tab) = chain();
    let restricted = exact_q(&tab, &[Tabular::LEFT], tab.gamma(), 1e-12).unwrap();
    let only_left = FnPredictor {
        stim_dim: 1,
        action_dim: 1,
        f: |_: &[f64], _: &[f64]| vec![LEFT],
    };
    let s0 = tab.one_hot(0);
    let mut critics = chain_world().critics.clone();
    let before = critics.q(&s0, &only_left.predict(&s0, &[0.0]).unwrap()).unwrap();
    assert!(before > restricted.value(0) + 0.1, "before {before}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    recalibrate_q(
        &mut critics,
        &only_left,
        &env,
        &[-1.0],
        &[1.0],
        &tabular_recalib(),
        0.1,
        &mut rng,
    )
    .unwrap();
    let after = critics.q(&s0, &only_left.predict(&s0, &[0.0]).unwrap()).unwrap();
    assert!((after - restricted.value(0)).abs() < 1e-2, "after {after}");
}

#[test]
fn disabled_recalibration_leaves_the_critic_untouched() {
    let (env, _) = chain();
    let mut critics = chain_world().critics.clone();
    let model = FnPredictor {
        stim_dim: 1,
        action_dim: 1,
        f: |_: &[f64], c: &[f64]| c.to_vec(),
    };
    let cfg = CopacConfig {
        q_update_enabled: false,
        ..tabular_recalib()
    };
    let report = recalibrate_q(
        &mut critics,
        &model,
        &env,
        &[-1.0],
        &[1.0],
        &cfg,
        0.1,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(report.updates, 0);
    let (a, b) = (critics.q1.flat_params(), chain_world().critics.q1.flat_params());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(critics, chain_world().critics);
}

#[test]
fn selection_equals_brute_force_over_the_same_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = BrainModel::new(3, 4, vec![-2.0], vec![2.0], &[16, 8], &mut rng).unwrap();
    let critic = CriticPair::new(3, 1, &[16, 16], 0.005, &mut rng).unwrap();
    for call in 0..50u64 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let chosen = select_stimulation(
            &s,
            &model,
            &critic,
            256,
            &[-3.0; 4],
            &[3.0; 4],
            &mut ChaCha8Rng::seed_from_u64(call),
        )
        .unwrap();
        let cands = sample_candidates(256, &[-3.0; 4], &[3.0; 4], &mut ChaCha8Rng::seed_from_u64(call));
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in cands.rows().into_iter().enumerate() {
            let q = critic.q(&s, &model.predict(&s, &c.to_vec()).unwrap()).unwrap();
            if q > best.1 {
                best = (i, q);
            }
        }
        assert_eq!(chosen.index, best.0);
        assert_eq!(chosen.stimulation, cands.row(best.0).to_vec());
    }
}

fn linear_buffer(brain: &LinearBrain, n: usize, rng: &mut ChaCha8Rng) -> OnlineBuffer {
    let mut buf = OnlineBuffer::default();
    for _ in 0..n {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..2)
            .map(|k| rng.random_range(brain.stim_low()[k]..=brain.stim_high()[k]))
            .collect();
        let a = brain.act(&s, &c).unwrap();
        buf.push(Experience {
            state: s.clone(),
            stimulation: c,
            action: a,
            reward: 0.0,
            next_state: s,
            done: false,
        });
    }
    buf
}

#[test]
fn brain_model_learns_a_linear_brain() {
    let brain = LinearBrain::new(vec![vec![0.5, -0.3]], vec![0.2], 1.0, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train = linear_buffer(&brain, 500, &mut rng);
    let test = linear_buffer(&brain, 200, &mut rng);
    let mut model = BrainModel::new(3, 2, vec![-2.0], vec![2.0], &BrainModel::HIDDEN, &mut rng).unwrap();
    fit_brain_model(&mut model, &train, CopacConfig::default().fit_options(), &mut rng).unwrap();
    let pred = model
        .predict_batch(test.states().view(), test.stimulations().view())
        .unwrap();
    let mse = (&pred - &test.actions()).mapv(|d| d * d).mean().unwrap();
    assert!(mse < 1e-2, "held-out mse {mse}");
}

#[test]
fn single_experience_fit_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let brain = LinearBrain::new(vec![vec![0.5, -0.3]], vec![0.2], 1.0, 2.0);
    let buf = linear_buffer(&brain, 1, &mut rng);
    let mut model = BrainModel::new(3, 2, vec![-2.0], vec![2.0], &BrainModel::HIDDEN, &mut rng).unwrap();
    let trace = fit_brain_model(&mut model, &buf, CopacConfig::default().fit_options(), &mut rng).unwrap();
    assert!(trace.last().unwrap() < trace.first().unwrap());
}

#[test]
fn inverse_model_inverts_a_linear_brain() {
    let brain = LinearBrain::new(vec![vec![0.8, 0.3], vec![-0.2, 0.6]], vec![0.0, 0.0], 1.0, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let buf = linear_buffer(&brain, 1000, &mut rng);
    let mut inv = InverseBrainModel::new(3, 2, vec![-1.0; 2], vec![1.0; 2], &BrainModel::HIDDEN, &mut rng).unwrap();
    inv.fit(
        &buf,
        FitOptions {
            epochs: 150,
            ..FitOptions::default()
        },
        &mut rng,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Targets reachable from the interior of the stimulation box.
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-0.8..0.8)).collect();
        let target = brain.act(&s, &c).unwrap();
        let got = brain.act(&s, &inv.stimulation(&s, &target).unwrap()).unwrap();
        let err = ((got[0] - target[0]).powi(2) + (got[1] - target[1]).powi(2)).sqrt();
        worst = worst.max(err);
    }
    assert!(worst < 0.05, "worst error {worst}");
}

fn linear_dynamics_buffer(n: usize, rng: &mut ChaCha8Rng) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(n, 2, 2);
    for _ in 0..n {
        let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = s.iter().zip(&c).map(|(s, c)| s + 0.1 * c).collect();
        buf.push(&s, &c, -s[0].abs(), &s2, false).unwrap();
    }
    buf
}

#[test]
fn dynamics_ensemble_learns_linear_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let train = linear_dynamics_buffer(1000, &mut rng);
    let test = linear_dynamics_buffer(200, &mut rng).all();
    let mut model = DynamicsModel::new(2, 2, 4, &[64, 64], &mut rng).unwrap();
    fit_dynamics(
        &mut model,
        &train,
        FitOptions {
            epochs: 50,
            lr: 1e-3,
            batch_size: Some(64),
        },
        &mut rng,
    )
    .unwrap();
    let (next, _, _) = model
        .predict(test.states.view(), test.actions.view(), &mut rng)
        .unwrap();
    let mse = (&next - &test.next_states).mapv(|d| d * d).mean().unwrap();
    assert!(mse < 1e-3, "held-out mse {mse}");
}

#[test]
fn dynamics_memorizes_repeated_transitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut buf = ReplayBuffer::new(64, 2, 1);
    let pairs = [([0.0, 1.0], 0.5, [1.0, 0.0], 1.0), ([1.0, 0.0], -0.5, [0.0, 1.0], 0.0)];
    for _ in 0..32 {
        for (s, c, s2, r) in &pairs {
            buf.push(s, &[*c], *r, s2, false).unwrap();
        }
    }
    let mut model = DynamicsModel::new(2, 1, 2, &[32], &mut rng).unwrap();
    let losses = fit_dynamics(
        &mut model,
        &buf,
        FitOptions {
            epochs: 300,
            lr: 5e-3,
            batch_size: Some(16),
        },
        &mut rng,
    )
    .unwrap();
    assert!(losses.iter().all(|l| *l < 1e-4), "{losses:?}");
}

/// Chain brain: only the top quarter of the stimulation range realizes
/// "right".
fn hard_chain_brain() -> TableBrain {
    TableBrain::new(vec![vec![LEFT, LEFT, LEFT, RIGHT]; 5])
}

fn online_sac() -> SacConfig {
    SacConfig {
        start_steps: 50,
        batch_size: 32,
        lr_actor: 1e-3,
        lr_critic: 1e-3,
        ..chain_sac()
    }
}

#[test]
fn model_free_mbpo_reduces_to_sac() {
    let (env, _) = chain();
    let brain = hard_chain_brain();
    let eval = EvalProtocol { episodes: 1, seed: 0 };
    let sac = online_sac();
    let mbpo = MbpoConfig {
        real_ratio: 1.0,
        branches_per_step: 0,
        ..MbpoConfig::default()
    };
    for seed in 0..3 {
        let a = sac_coproc_baseline(&env, &brain, 6, &sac, eval, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = run_mbpo(
            &env,
            &brain,
            6,
            &sac,
            &mbpo,
            ModelSource::<DynamicsModel>::Learned,
            eval,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        let key = |s: &[copac_core::harness::EpisodeStats]| -> Vec<(u64, u64)> {
            s.iter()
                .map(|e| (e.train_return.to_bits(), e.eval_return.to_bits()))
                .collect()
        };
        assert_eq!(key(&a), key(&b.stats));
        assert_eq!(b.model_transitions, 0);
    }
}

#[test]
fn perfect_model_mbpo_is_at_least_as_good_as_sac_on_the_chain() {
    const EPISODES: usize = 25;
    let (env, tab) = chain();
    let brain = hard_chain_brain();
    let truth = {
        let (tab, brain) = (tab.clone(), brain.clone());
        FnDynamics {
            f: move |s: &[f64], c: &[f64]| {
                let i = tab.state_index(s);
                let a = brain.table[i][brain.bin(i, c[0])];
                let (j, r, done) = tab.transition(i, tab.decode_action(a));
                (tab.one_hot(j), r, done)
            },
        }
    };
    let eval = EvalProtocol { episodes: 1, seed: 0 };
    let sac = online_sac();
    let mbpo = MbpoConfig {
        real_ratio: 0.5,
        branches_per_step: 8,
        ..MbpoConfig::default()
    };
    let (mut sum_sac, mut sum_mbpo) = (0.0, 0.0);
    let seeds = 10;
    for seed in 0..seeds {
        let queries_before = brain.queries();
        let a = sac_coproc_baseline(&env, &brain, EPISODES, &sac, eval, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = run_mbpo(
            &env,
            &brain,
            EPISODES,
            &sac,
            &mbpo,
            ModelSource::Fixed(&truth),
            eval,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        assert!(b.brain_queries as usize <= EPISODES * 20);
        assert!((brain.queries() - queries_before) as usize <= 2 * EPISODES * 20);
        sum_sac += a.last().unwrap().eval_return;
        sum_mbpo += b.stats.last().unwrap().eval_return;
    }
    assert!(
        sum_mbpo >= sum_sac,
        "mbpo {} sac {}",
        sum_mbpo / seeds as f64,
        sum_sac / seeds as f64
    );
}

#[test]
fn conservative_critic_on_full_coverage_chain_data() {
    let (env, tab) = chain();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = collect_dataset(&env, None, 5000, 1.0, &mut rng).unwrap();
    for s in 0..4 {
        for a in [LEFT, RIGHT] {
            let seen = data
                .all()
                .states
                .rows()
                .into_iter()
                .zip(data.all().actions.rows())
                .any(|(o, u)| tab.state_index(&o.to_vec()) == s && (u[0] < 0.0) == (a < 0.0));
            assert!(seen, "dataset misses ({s}, {a})");
        }
    }
    let cfg = SacConfig {
        steps: 6000,
        ..chain_sac()
    };
    let (critics, _) = train_offline_conservative(
        &data,
        vec![-1.0],
        vec![1.0],
        &cfg,
        Conservative {
            weight: 0.1,
            samples: 10,
        },
        &mut rng,
    )
    .unwrap();
    let exact = exact_q(&tab, &[Tabular::LEFT, Tabular::RIGHT], tab.gamma(), 1e-12).unwrap();
    for s in 0..4 {
        let o = tab.one_hot(s);
        for (a, idx) in [(LEFT, Tabular::LEFT), (RIGHT, Tabular::RIGHT)] {
            let q = critics.q(&o, &[a]).unwrap();
            let want = exact.q(s, idx);
            assert!((q - want).abs() <= 0.1 * want, "Q({s},{a}) = {q}, exact {want}");
        }
    }
}

#[test]
fn conservative_penalty_favours_dataset_actions() {
    let mut env = World::by_name("pendulum").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // Logged actions cluster around +1.5.
    let mut data = ReplayBuffer::new(4000, 3, 1);
    let mut s = env.reset(&mut rng);
    for t in 0..4000 {
        let a = [(1.5 + 0.1 * rng.random_range(-1.0..1.0f64)).clamp(-2.0, 2.0)];
        let r = env.step(&a).unwrap();
        data.push(&s, &a, r.reward, &r.next_state, r.done).unwrap();
        s = if (t + 1) % 200 == 0 {
            env.reset(&mut rng)
        } else {
            r.next_state
        };
    }
    let cfg = SacConfig {
        steps: 1500,
        batch_size: 64,
        ..SacConfig::default()
    };
    let (critics, _) =
        train_offline_conservative(&data, vec![-2.0], vec![2.0], &cfg, Conservative::default(), &mut rng).unwrap();
    let batch = data.sample(1000, &mut rng).unwrap();
    let on_data = critics
        .q_batch(batch.states.view(), batch.actions.view())
        .unwrap()
        .mean()
        .unwrap();
    let uniform = sample_candidates(1000, &[-2.0], &[2.0], &mut rng);
    let off_data = critics
        .q_batch(batch.states.view(), uniform.view())
        .unwrap()
        .mean()
        .unwrap();
    assert!(on_data > off_data + 1.0, "data {on_data} uniform {off_data}");
}

#[test]
fn copac_keeps_its_budget_and_books_every_episode() {
    let (env, _) = chain();
    let brain = hard_chain_brain();
    let cfg = CopacConfig {
        episodes: 25,
        recalib_rollouts: 1,
        recalib_updates: 20,
        fit_epochs: 5,
        model_hidden: vec![16, 8],
        ..CopacConfig::default()
    };
    let before = brain.queries();
    let run = run_copac(
        &env,
        &brain,
        &chain_world().critics,
        &cfg,
        EvalProtocol { episodes: 1, seed: 0 },
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    assert_eq!(run.stats.len(), 25);
    assert_eq!(
        run.stats.iter().map(|s| s.episode).collect::<Vec<_>>(),
        (1..=25).collect::<Vec<_>>()
    );
    // Only online steps touch the true brain: recalibration uses the model
    // and evaluation uses a clone.
    assert_eq!(run.brain_queries, run.buffer.len() as u64);
    assert_eq!(brain.queries() - before, run.buffer.len() as u64);
    assert!(run.brain_queries <= 25 * 20);
    assert_eq!(run.recalibrations.len(), 25);
}

#[test]
fn selection_through_an_analytic_critic_finds_the_peak() {
    let model = FnPredictor {
        stim_dim: 1,
        action_dim: 1,
        f: |_: &[f64], c: &[f64]| c.to_vec(),
    };
    let critic = FnValue {
        state_dim: 1,
        action_dim: 1,
        f: |_: &[f64], a: &[f64]| -(a[0] - 0.3).powi(2),
    };
    let grid = Array2::from_shape_fn((21, 1), |(i, _)| -1.0 + 0.1 * i as f64);
    let (i, _) = copac_core::copac::score_candidates(&[0.0], grid.view(), &model, &critic).unwrap();
    assert!((grid[[i, 0]] - 0.3).abs() < 1e-12);
}

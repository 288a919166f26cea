use copac_core::copac::{select_stimulation, BrainModel};
use copac_core::nn::{Activation, FeedforwardNet};
use copac_core::sac::{Batch, Conservative, CriticPair, SacAgent, SacConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 256;

fn random_batch(rng: &mut ChaCha8Rng) -> Batch {
    Batch {
        states: Array2::from_shape_simple_fn((BATCH, 3), || rng.random_range(-1.0..1.0)),
        actions: Array2::from_shape_simple_fn((BATCH, 1), || rng.random_range(-2.0..2.0)),
        rewards: Array1::from_shape_simple_fn(BATCH, || rng.random_range(-16.0..0.0)),
        next_states: Array2::from_shape_simple_fn((BATCH, 3), || rng.random_range(-1.0..1.0)),
        dones: Array1::zeros(BATCH),
    }
}

fn nets(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = FeedforwardNet::new(&[4, 64, 64, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((BATCH, 4), || rng.random_range(-1.0..1.0));
    let g = Array2::from_elem((BATCH, 1), 1.0 / BATCH as f64);

    c.bench_function("mlp forward 256x[4,64,64,1]", |b| {
        b.iter(|| net.forward_batch(x.view()).unwrap())
    });
    c.bench_function("mlp forward+backward 256x[4,64,64,1]", |b| {
        b.iter(|| {
            let cache = net.forward_cached(x.view()).unwrap();
            net.backward(&cache, g.view()).unwrap()
        })
    });
}

fn selection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = BrainModel::new(3, 8, vec![-2.0], vec![2.0], &BrainModel::HIDDEN, &mut rng).unwrap();
    let critic = CriticPair::new(3, 1, &[64, 64], 0.005, &mut rng).unwrap();
    let state = [0.3, -0.2, 0.5];
    let (low, high) = ([-3.0; 8], [3.0; 8]);
    for n in [64, 256, 1024] {
        c.bench_function(&format!("select_stimulation {n} candidates"), |b| {
            b.iter(|| select_stimulation(&state, &model, &critic, n, &low, &high, &mut rng).unwrap())
        });
    }
}

fn sac_updates(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let agent = SacAgent::new(3, vec![-2.0], vec![2.0], SacConfig::default(), &mut rng).unwrap();
    let batch = random_batch(&mut rng);
    c.bench_function("sac update batch 256", |b| {
        b.iter_batched(
            || agent.clone(),
            |mut a| a.update(&batch, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("conservative sac update batch 256", |b| {
        b.iter_batched(
            || agent.clone(),
            |mut a| {
                a.update_conservative(&batch, Conservative::default(), &mut rng)
                    .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, nets, selection, sac_updates);
criterion_main!(benches);

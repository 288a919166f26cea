use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{check_len, Error, Result};

/// Minibatch of transitions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for genuine terminal transitions, 0.0 otherwise.
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Row-wise concatenation of two batches with matching widths.
    pub fn concat(a: &Batch, b: &Batch) -> Batch {
        use ndarray::{concatenate, Axis};
        Batch {
            states: concatenate(Axis(0), &[a.states.view(), b.states.view()]).expect("widths match"),
            actions: concatenate(Axis(0), &[a.actions.view(), b.actions.view()]).expect("widths match"),
            rewards: concatenate(Axis(0), &[a.rewards.view(), b.rewards.view()]).expect("1-d"),
            next_states: concatenate(Axis(0), &[a.next_states.view(), b.next_states.view()]).expect("widths match"),
            dones: concatenate(Axis(0), &[a.dones.view(), b.dones.view()]).expect("1-d"),
        }
    }
}

/// Fixed-capacity ring of `(s, a, r, s', done)` transitions stored in flat
/// arrays. `a` is whatever the learner acts with: a world action or a
/// stimulation.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<f64>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            states: vec![0.0; capacity * state_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * state_dim],
            dones: vec![0.0; capacity],
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], done: bool) -> Result<()> {
        check_len("replay state", self.state_dim, state.len())?;
        check_len("replay action", self.action_dim, action.len())?;
        check_len("replay next state", self.state_dim, next_state.len())?;
        let i = self.head;
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(state);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(action);
        self.rewards[i] = reward;
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(next_state);
        self.dones[i] = if done { 1.0 } else { 0.0 };
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// `min(batch_size, len)` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::EmptyData("replay buffer"));
        }
        let idx = sample(rng, self.len, batch_size.min(self.len)).into_vec();
        Ok(self.gather(&idx))
    }

    /// Every stored transition in insertion order (oldest first).
    pub fn all(&self) -> Batch {
        let start = if self.len < self.capacity { 0 } else { self.head };
        let idx: Vec<usize> = (0..self.len).map(|k| (start + k) % self.capacity).collect();
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (sd, ad, n) = (self.state_dim, self.action_dim, idx.len());
        let pick = |src: &[f64], width: usize| {
            let mut out = Vec::with_capacity(n * width);
            for &i in idx {
                out.extend_from_slice(&src[i * width..(i + 1) * width]);
            }
            Array2::from_shape_vec((n, width), out).expect("shape")
        };
        Batch {
            states: pick(&self.states, sd),
            actions: pick(&self.actions, ad),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: pick(&self.next_states, sd),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    /// State rows only, for model rollouts and distillation.
    pub fn state_row(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 1, 1);
        for i in 0..5 {
            let x = i as f64;
            b.push(&[x], &[x], x, &[x + 1.0], false).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.all().rewards.to_vec(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sample_has_no_repeats() {
        let mut b = ReplayBuffer::new(100, 1, 1);
        for i in 0..50 {
            b.push(&[i as f64], &[0.0], i as f64, &[0.0], i % 7 == 0).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = b.sample(50, &mut rng).unwrap();
        let mut r = batch.rewards.to_vec();
        r.sort_by(f64::total_cmp);
        r.dedup();
        assert_eq!(r.len(), 50);
        assert_eq!(b.sample(80, &mut rng).unwrap().len(), 50);
    }

    #[test]
    fn empty_sample_errors() {
        let b = ReplayBuffer::new(4, 2, 1);
        assert!(matches!(
            b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::EmptyData(_))
        ));
    }
}

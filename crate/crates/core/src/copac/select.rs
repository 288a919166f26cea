use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::sac::ActionValue;

use super::model::ActionPredictor;

/// Chosen candidate and the value it was chosen for.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub stimulation: Vec<f64>,
    pub value: f64,
}

/// `n` stimulations drawn uniformly from the box, row by row.
pub fn sample_candidates<R: Rng + ?Sized>(n: usize, low: &[f64], high: &[f64], rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, low.len()), |(_, k)| rng.random_range(low[k]..=high[k]))
}

/// Index of the candidate maximizing `Q(s, f_hat(s, c))`; ties go to the
/// lowest index. Also returns every candidate's value.
pub fn score_candidates<P, Q>(
    state: &[f64],
    candidates: ArrayView2<'_, f64>,
    model: &P,
    critic: &Q,
) -> Result<(usize, Vec<f64>)>
where
    P: ActionPredictor + ?Sized,
    Q: ActionValue + ?Sized,
{
    let n = candidates.nrows();
    if n == 0 {
        return Err(Error::EmptyData("stimulation candidates"));
    }
    check_len("candidate width", model.stim_dim(), candidates.ncols())?;
    let states = ArrayView2::from_shape((1, state.len()), state)
        .expect("row view")
        .broadcast((n, state.len()))
        .expect("broadcast")
        .to_owned();
    let actions = model.predict_batch(states.view(), candidates)?;
    let values = critic.q_batch(states.view(), actions.view())?.to_vec();
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    Ok((best, values))
}

/// Random-shooting argmax of `Q(s, f_hat(s, a_c))` over `candidates`
/// uniform stimulations. No exploration noise.
pub fn select_stimulation<P, Q, R>(
    state: &[f64],
    model: &P,
    critic: &Q,
    candidates: usize,
    low: &[f64],
    high: &[f64],
    rng: &mut R,
) -> Result<Selection>
where
    P: ActionPredictor + ?Sized,
    Q: ActionValue + ?Sized,
    R: Rng + ?Sized,
{
    let cands = sample_candidates(candidates, low, high, rng);
    let (index, values) = score_candidates(state, cands.view(), model, critic)?;
    Ok(Selection {
        index,
        stimulation: cands.index_axis(Axis(0), index).to_vec(),
        value: values[index],
    })
}

/// Adds `N(0, (sigma * half_range)^2)` noise per dimension and clips.
pub fn add_exploration_noise<R: Rng + ?Sized>(stim: &mut [f64], sigma: f64, low: &[f64], high: &[f64], rng: &mut R) {
    for (k, x) in stim.iter_mut().enumerate() {
        let half = 0.5 * (high[k] - low[k]);
        let n: f64 = rng.sample(StandardNormal);
        *x = (*x + sigma * half * n).clamp(low[k], high[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copac::FnPredictor;
    use crate::sac::FnValue;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity() -> FnPredictor<impl Fn(&[f64], &[f64]) -> Vec<f64>> {
        FnPredictor {
            stim_dim: 1,
            action_dim: 1,
            f: |_: &[f64], c: &[f64]| c.to_vec(),
        }
    }

    #[test]
    fn constant_q_picks_first() {
        let q = FnValue {
            state_dim: 1,
            action_dim: 1,
            f: |_: &[f64], _: &[f64]| 4.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = select_stimulation(&[0.0], &identity(), &q, 64, &[-1.0], &[1.0], &mut rng).unwrap();
        assert_eq!(s.index, 0);
    }

    #[test]
    fn grid_argmax() {
        let q = FnValue {
            state_dim: 1,
            action_dim: 1,
            f: |_: &[f64], a: &[f64]| -(a[0] - 0.3).powi(2),
        };
        let grid = Array2::from_shape_fn((21, 1), |(i, _)| -1.0 + 0.1 * i as f64);
        let (i, _) = score_candidates(&[0.0], grid.view(), &identity(), &q).unwrap();
        assert!((grid[[i, 0]] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn noise_stays_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let mut x = vec![2.9, -2.9];
            add_exploration_noise(&mut x, 0.5, &[-3.0, -3.0], &[3.0, 3.0], &mut rng);
            assert!(x.iter().all(|v| v.abs() <= 3.0));
        }
    }
}

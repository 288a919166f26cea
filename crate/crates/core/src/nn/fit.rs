use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::nn::{adam_update, AdamState, FeedforwardNet};

/// Supervised regression settings.
///
/// The default (75 epochs at 5e-3) is the brain-model training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Minibatch size; `None` means `min(64, dataset size)`.
    pub batch_size: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epochs: 75,
            lr: 5e-3,
            batch_size: None,
        }
    }
}

/// Minibatch Adam on mean-squared error, shuffling every epoch with `rng`.
/// Returns the mean minibatch loss of each epoch.
pub fn mse_fit<R: Rng + ?Sized>(
    net: &mut FeedforwardNet,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    options: FitOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::EmptyData("regression dataset"));
    }
    if options.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    check_len("regression targets", n, targets.nrows())?;
    check_len("regression input columns", net.input_dim(), inputs.ncols())?;
    check_len("regression target columns", net.output_dim(), targets.ncols())?;

    let batch_size = options.batch_size.unwrap_or(64).clamp(1, n);
    let mut adam = AdamState::for_net(net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(options.epochs);

    for _ in 0..options.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let cache = net.forward_cached(x.view())?;
            let mut diff = cache.output() - &y;
            let scale = 1.0 / diff.len() as f64;
            epoch_loss += diff.iter().map(|d| d * d).sum::<f64>() * scale;
            batches += 1;
            diff *= 2.0 * scale;
            let (grads, _) = net.backward(&cache, diff.view())?;
            adam_update(net, &grads, &mut adam, options.lr)?;
        }
        let loss = epoch_loss / batches as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence("non-finite regression loss".into()));
        }
        trace.push(loss);
    }
    Ok(trace)
}

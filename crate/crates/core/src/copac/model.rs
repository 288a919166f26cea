use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{hstack, mse_fit, Activation, FeedforwardNet, FitOptions};

/// Anything predicting world actions from `(state, stimulation)` rows.
pub trait ActionPredictor {
    fn stim_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn predict_batch(&self, states: ArrayView2<'_, f64>, stims: ArrayView2<'_, f64>) -> Result<Array2<f64>>;

    fn predict(&self, state: &[f64], stim: &[f64]) -> Result<Vec<f64>> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let c = ArrayView2::from_shape((1, stim.len()), stim).expect("row view");
        Ok(self.predict_batch(s, c)?.row(0).to_vec())
    }
}

/// Wraps a plain function as an [`ActionPredictor`].
pub struct FnPredictor<F> {
    pub stim_dim: usize,
    pub action_dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &[f64]) -> Vec<f64>> ActionPredictor for FnPredictor<F> {
    fn stim_dim(&self) -> usize {
        self.stim_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict_batch(&self, states: ArrayView2<'_, f64>, stims: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("predictor rows", states.nrows(), stims.nrows())?;
        let mut out = Array2::zeros((states.nrows(), self.action_dim));
        for (i, (s, c)) in states.rows().into_iter().zip(stims.rows()).enumerate() {
            let a = (self.f)(&s.to_vec(), &c.to_vec());
            check_len("predictor output", self.action_dim, a.len())?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
        }
        Ok(out)
    }
}

/// One step of the real coprocessor loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub stimulation: Vec<f64>,
    /// Action the real brain produced.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnlineBuffer {
    pub experiences: Vec<Experience>,
}

impl OnlineBuffer {
    pub fn push(&mut self, e: Experience) {
        self.experiences.push(e);
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    fn stack(&self, pick: impl Fn(&Experience) -> &[f64]) -> Array2<f64> {
        let width = self.experiences.first().map_or(0, |e| pick(e).len());
        let flat: Vec<f64> = self.experiences.iter().flat_map(|e| pick(e).iter().copied()).collect();
        Array2::from_shape_vec((self.len(), width), flat).expect("rectangular buffer")
    }

    pub fn states(&self) -> Array2<f64> {
        self.stack(|e| &e.state)
    }

    pub fn stimulations(&self) -> Array2<f64> {
        self.stack(|e| &e.stimulation)
    }

    pub fn actions(&self) -> Array2<f64> {
        self.stack(|e| &e.action)
    }
}

/// Learned brain model: `(state ++ stimulation) -> world action`, ReLU
/// hidden layers, predictions clipped to the action bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainModel {
    pub net: FeedforwardNet,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    state_dim: usize,
}

impl BrainModel {
    pub const HIDDEN: [usize; 3] = [64, 32, 8];

    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        stim_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![state_dim + stim_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_low.len());
        let net = FeedforwardNet::new(&dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(BrainModel {
            net,
            action_low,
            action_high,
            state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Unclipped network output.
    pub fn raw_batch(&self, states: ArrayView2<'_, f64>, stims: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("brain model rows", states.nrows(), stims.nrows())?;
        self.net.forward_batch(hstack(states, stims).view())
    }
}

impl ActionPredictor for BrainModel {
    fn stim_dim(&self) -> usize {
        self.net.input_dim() - self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn predict_batch(&self, states: ArrayView2<'_, f64>, stims: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut a = self.raw_batch(states, stims)?;
        for (k, mut col) in a.columns_mut().into_iter().enumerate() {
            let (lo, hi) = (self.action_low[k], self.action_high[k]);
            col.mapv_inplace(|x| x.clamp(lo, hi));
        }
        Ok(a)
    }
}

/// Refits the brain model from its current parameters on the whole buffer
/// by mean-squared error against the actions the real brain produced.
/// Returns the per-epoch loss trace.
pub fn fit_brain_model<R: Rng + ?Sized>(
    model: &mut BrainModel,
    buffer: &OnlineBuffer,
    options: FitOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::EmptyData("online buffer"));
    }
    let x = hstack(buffer.states().view(), buffer.stimulations().view());
    let y = buffer.actions();
    mse_fit(&mut model.net, x.view(), y.view(), options, rng)
}

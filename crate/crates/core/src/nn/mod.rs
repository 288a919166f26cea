//! Dense feedforward networks with exact backpropagation.
//!
//! Every learned object in the crate (policies, critics, brain models,
//! dynamics ensembles) is a [`FeedforwardNet`]. Layer `i` computes
//! `a[i + 1] = act(W[i] a[i] + b[i])` where `W[i]` has shape
//! `layer_dims[i + 1] x layer_dims[i]`. Hidden layers share one activation;
//! the last layer has its own.
//!
//! Two forward paths exist: [`FeedforwardNet::forward`] is a plain per-sample
//! loop, while [`FeedforwardNet::forward_batch`] and
//! [`FeedforwardNet::forward_cached`] run row-batched matrix products and are
//! what training uses.

mod adam;
mod fit;

pub use adam::{adam_update, AdamState};
pub use fit::{mse_fit, FitOptions};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetRecord", into = "NetRecord")]
pub struct FeedforwardNet {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Additive perturbation of one layer's post-activation values.
///
/// `layer` indexes activations: `0` is the input, `layer_dims.len() - 1` the
/// output. `values` has one entry per unit of that layer.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub layer: usize,
    pub values: &'a [f64],
}

/// Activations recorded by a batched forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch; the last entry is the output.
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Parameter gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &FeedforwardNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Row-major flattening in the same order as [`FeedforwardNet::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

impl FeedforwardNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims.windows(2).map(|d| glorot(d[1], d[0], rng)).collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(FeedforwardNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        validate_dims(&layer_dims)?;
        let n = layer_dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::Config(format!(
                "expected {n} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for i in 0..n {
            let (rows, cols) = weights[i].dim();
            if rows != layer_dims[i + 1] || cols != layer_dims[i] {
                return Err(Error::Config(format!(
                    "weights[{i}] has shape {rows}x{cols}, expected {}x{}",
                    layer_dims[i + 1],
                    layer_dims[i]
                )));
            }
            if biases[i].len() != layer_dims[i + 1] {
                return Err(Error::Config(format!(
                    "biases[{i}] has length {}, expected {}",
                    biases[i].len(),
                    layer_dims[i + 1]
                )));
            }
        }
        let finite = weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && biases.iter().all(|b| b.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NumericDomain("non-finite network parameter".into()));
        }
        // Own standard-layout copies so parameter slices are always contiguous.
        let weights = weights
            .into_iter()
            .map(|w| w.as_standard_layout().into_owned())
            .collect();
        Ok(FeedforwardNet {
            layer_dims,
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    /// Number of weight matrices.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Activation applied by weight matrix `layer`.
    #[inline]
    pub fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameter vector", self.num_params(), flat.len())?;
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for x in w.iter_mut().chain(b.iter_mut()) {
                *x = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_injected(input, None)
    }

    /// Single-sample forward pass with an optional additive injection into
    /// one hidden layer's post-activation values.
    pub fn forward_injected(&self, input: &[f64], injection: Option<Injection<'_>>) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), input.len())?;
        if let Some(inj) = injection {
            if inj.layer == 0 || inj.layer >= self.layer_dims.len() {
                return Err(Error::Config(format!(
                    "injection layer {} is not a hidden or output layer",
                    inj.layer
                )));
            }
            check_len("injection values", self.layer_dims[inj.layer], inj.values.len())?;
        }
        let mut x = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let act = self.activation_of(l);
            let mut next = Vec::with_capacity(w.nrows());
            for (row, bias) in w.rows().into_iter().zip(b.iter()) {
                let mut z = *bias;
                for (wi, xi) in row.iter().zip(&x) {
                    z += wi * xi;
                }
                next.push(act.apply(z));
            }
            if let Some(inj) = injection {
                if inj.layer == l + 1 {
                    for (v, add) in next.iter_mut().zip(inj.values) {
                        *v += add;
                    }
                }
            }
            x = next;
        }
        Ok(x)
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_len("network input columns", self.input_dim(), inputs.ncols())?;
        let mut x = self.layer(0, inputs);
        for l in 1..self.weights.len() {
            x = self.layer(l, x.view());
        }
        Ok(x)
    }

    /// Batched forward pass that keeps every activation for [`Self::backward`].
    pub fn forward_cached(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        check_len("network input columns", self.input_dim(), inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(inputs.to_owned());
        for l in 0..self.weights.len() {
            let next = self.layer(l, activations[l].view());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    fn layer(&self, l: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights[l].t());
        z += &self.biases[l];
        let act = self.activation_of(l);
        if act != Activation::Identity {
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    /// Backpropagates `output_grad` (one row per sample) through a cached
    /// forward pass. Returns parameter gradients summed over the batch and
    /// the gradient with respect to each input row.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<'_, f64>) -> Result<(Gradients, Array2<f64>)> {
        self.backprop(cache, output_grad, true)
            .map(|(g, x)| (g.expect("requested"), x))
    }

    /// Input gradient only; skips the parameter-gradient products.
    pub fn backward_inputs(&self, cache: &ForwardCache, output_grad: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.backprop(cache, output_grad, false).map(|(_, x)| x)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Array2<f64>)> {
        let n = self.weights.len();
        if cache.activations.len() != n + 1 {
            return Err(Error::shape("forward cache layers", n + 1, cache.activations.len()));
        }
        let batch = cache.activations[0].nrows();
        check_len("output gradient rows", batch, output_grad.nrows())?;
        check_len("output gradient columns", self.output_dim(), output_grad.ncols())?;

        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = output_grad.to_owned();
        for l in (0..n).rev() {
            let act = self.activation_of(l);
            if act != Activation::Identity {
                delta.zip_mut_with(&cache.activations[l + 1], |d, &y| *d *= act.derivative_from_output(y));
            }
            if let Some(g) = grads.as_mut() {
                let gw = delta.t().dot(&cache.activations[l]);
                g.weights[l] = if gw.is_standard_layout() {
                    gw
                } else {
                    gw.as_standard_layout().into_owned()
                };
                g.biases[l] = delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&self.weights[l]);
        }
        Ok((grads, delta))
    }

    /// Exact gradients of `<forward(input), output_grad>` for one sample.
    pub fn backward_single(&self, input: &[f64], output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        check_len("network input", self.input_dim(), input.len())?;
        check_len("output gradient", self.output_dim(), output_grad.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let cache = self.forward_cached(x)?;
        let (grads, input_grad) = self.backward(&cache, g)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    /// Polyak averaging: `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &FeedforwardNet, tau: f64) {
        debug_assert_eq!(self.layer_dims, source.layer_dims);
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            t.zip_mut_with(s, |t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            t.zip_mut_with(s, |t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
    }

    /// Euclidean distance between the flattened parameters of two nets.
    pub fn param_distance(&self, other: &FeedforwardNet) -> f64 {
        self.flat_params()
            .iter()
            .zip(other.flat_params())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Serialized form: shapes plus row-major flattened parameters.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetRecord {
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<FeedforwardNet> for NetRecord {
    fn from(net: FeedforwardNet) -> Self {
        NetRecord {
            weights: net.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: net.biases.iter().map(|b| b.to_vec()).collect(),
            layer_dims: net.layer_dims,
            hidden_activation: net.hidden_activation,
            output_activation: net.output_activation,
        }
    }
}

impl TryFrom<NetRecord> for FeedforwardNet {
    type Error = Error;

    fn try_from(r: NetRecord) -> Result<Self> {
        validate_dims(&r.layer_dims)?;
        if r.weights.len() + 1 != r.layer_dims.len() {
            return Err(Error::Config(format!(
                "{} weight arrays for {} layers",
                r.weights.len(),
                r.layer_dims.len()
            )));
        }
        let mut weights = Vec::with_capacity(r.weights.len());
        for (i, flat) in r.weights.into_iter().enumerate() {
            let shape = (r.layer_dims[i + 1], r.layer_dims[i]);
            let w = Array2::from_shape_vec(shape, flat)
                .map_err(|_| Error::Config(format!("weights[{i}] does not hold {}x{} values", shape.0, shape.1)))?;
            weights.push(w);
        }
        let biases = r.biases.into_iter().map(Array1::from_vec).collect();
        FeedforwardNet::from_parts(r.layer_dims, weights, biases, r.hidden_activation, r.output_activation)
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(
            "a network needs at least an input and an output layer".into(),
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config("layer dimensions must be positive".into()));
    }
    Ok(())
}

/// Concatenates two row-aligned batches column-wise.
pub fn hstack(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}

/// Views a slice as a single-row batch.
pub fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row view")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: Array2<f64>, b: Array1<f64>) -> FeedforwardNet {
        let dims = vec![w.ncols(), w.nrows()];
        FeedforwardNet::from_parts(dims, vec![w], vec![b], Activation::Identity, Activation::Identity).unwrap()
    }

    #[test]
    fn identity_net_passes_input_through() {
        let net = linear(Array2::eye(2), Array1::zeros(2));
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_linear_algebra() {
        let net = linear(array![[2.0, 0.0], [0.0, 3.0]], array![1.0, -1.0]);
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 2.0]);
        let batch = net.forward_batch(array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(batch, array![[3.0, 2.0]]);
    }

    #[test]
    fn wrong_input_length_is_shape_error() {
        let net = linear(Array2::eye(2), Array1::zeros(2));
        assert!(matches!(net.forward(&[1.0]), Err(Error::InputShape { .. })));
        assert!(matches!(
            net.backward_single(&[1.0, 2.0], &[1.0]),
            Err(Error::InputShape { .. })
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FeedforwardNet::new(&[3, 5, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (g, gx) = net.backward_single(&[0.1, -0.4, 0.7], &[0.0, 0.0]).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
        assert!(gx.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_hand_derivative() {
        let net = linear(array![[0.7]], array![0.0]);
        let (g, gx) = net.backward_single(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 2.0);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(gx, vec![0.7]);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = FeedforwardNet::new(&[10, 30], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(net.weights()[0].iter().all(|w| w.abs() <= limit));
        assert!(net.biases()[0].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let r = FeedforwardNet::from_parts(
            vec![2, 3],
            vec![Array2::zeros((2, 2))],
            vec![Array1::zeros(3)],
            Activation::Relu,
            Activation::Identity,
        );
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(FeedforwardNet::new(
            &[3],
            Activation::Relu,
            Activation::Identity,
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
    }

    #[test]
    fn injection_adds_to_post_activation() {
        // 2-2-2-1 identity net; inject 0.5 into unit 1 of the second hidden layer.
        let net = FeedforwardNet::from_parts(
            vec![2, 2, 2, 1],
            vec![
                array![[1.0, 2.0], [0.0, 1.0]],
                array![[1.0, 0.0], [1.0, 1.0]],
                array![[2.0, -1.0]],
            ],
            vec![array![0.0, 0.0], array![0.0, 0.0], array![0.5]],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap();
        // h1 = [1+2, 1] = [3, 1]; h2 = [3, 4]; out = 6 - 4 + 0.5 = 2.5
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![2.5]);
        let inj = Injection {
            layer: 2,
            values: &[0.0, 0.5],
        };
        // h2 = [3, 4.5]; out = 6 - 4.5 + 0.5 = 2.0
        assert_eq!(net.forward_injected(&[1.0, 1.0], Some(inj)).unwrap(), vec![2.0]);
    }

    #[test]
    fn soft_update_with_tau_one_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = FeedforwardNet::new(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut b = FeedforwardNet::new(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        b.soft_update_from(&a, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = FeedforwardNet::new(&[3, 4, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let mut b = FeedforwardNet::new(&[3, 4, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        b.set_flat_params(&a.flat_params()).unwrap();
        assert_eq!(a, b);
    }
}

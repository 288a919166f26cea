//! The synthetic patient: a healthy policy network, a lesion, and the
//! stimulation sites through which a coprocessor can steer it.
//!
//! The injured brain realizes the true mapping `f(s, a_c) -> a`. It is never
//! trained online; every call to [`Brain::act`] bumps a query counter so
//! callers can prove how often the real brain was consulted.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{StepResult, World, WorldMdpSpec};
use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, FeedforwardNet, Injection};

/// Anything mapping `(state, stimulation)` to a world action.
pub trait Brain: Send + Sync {
    fn stim_dim(&self) -> usize;
    fn stim_low(&self) -> &[f64];
    fn stim_high(&self) -> &[f64];
    fn action_dim(&self) -> usize;

    /// World action produced under `stimulation` (clipped to the stimulation
    /// box). Counts as one query.
    fn act(&self, state: &[f64], stimulation: &[f64]) -> Result<Vec<f64>>;

    /// Number of [`Brain::act`] calls so far.
    fn queries(&self) -> u64;

    fn clip_stimulation(&self, stimulation: &[f64]) -> Vec<f64> {
        stimulation
            .iter()
            .zip(self.stim_low().iter().zip(self.stim_high()))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }
}

/// Steps `env` with the action the brain produces for the current state and
/// `stimulation`. Returns that action alongside the transition.
pub fn coproc_step(env: &mut World, brain: &dyn Brain, stimulation: &[f64]) -> Result<(Vec<f64>, StepResult)> {
    let state = env.observe();
    let action = brain.act(&state, stimulation)?;
    let result = env.step(&action)?;
    Ok((action, result))
}

#[derive(Debug, Default)]
struct QueryCounter(AtomicU64);

impl QueryCounter {
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Clones start with a fresh count: a copy is a separate patient session.
impl Clone for QueryCounter {
    fn clone(&self) -> Self {
        QueryCounter::default()
    }
}

/// Deterministic state-to-action policy with tanh output scaled to the
/// action bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthyBrain {
    pub policy_net: FeedforwardNet,
    pub env_spec: WorldMdpSpec,
}

impl HealthyBrain {
    pub const HIDDEN: [usize; 2] = [64, 64];

    pub fn new(policy_net: FeedforwardNet, env_spec: WorldMdpSpec) -> Result<Self> {
        check_len("healthy policy input", env_spec.state_dim, policy_net.input_dim())?;
        check_len("healthy policy output", env_spec.action_dim, policy_net.output_dim())?;
        if policy_net.output_activation() != Activation::Tanh {
            return Err(Error::Config("healthy policy must end in tanh".into()));
        }
        Ok(HealthyBrain { policy_net, env_spec })
    }

    /// Untrained `state -> 64 -> 64 -> action` tanh network.
    pub fn random(env_spec: WorldMdpSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [
            env_spec.state_dim,
            Self::HIDDEN[0],
            Self::HIDDEN[1],
            env_spec.action_dim,
        ];
        let net = FeedforwardNet::new(&dims, Activation::Tanh, Activation::Tanh, &mut rng)?;
        HealthyBrain::new(net, env_spec)
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let y = self.policy_net.forward(state)?;
        Ok(scale_to_bounds(&y, &self.env_spec))
    }
}

/// Maps `[-1, 1]` onto `[low, high]` per dimension.
pub(crate) fn scale_to_bounds(y: &[f64], spec: &WorldMdpSpec) -> Vec<f64> {
    y.iter()
        .zip(spec.action_low.iter().zip(&spec.action_high))
        .map(|(y, (lo, hi))| lo + 0.5 * (y + 1.0) * (hi - lo))
        .collect()
}

/// Inverse of [`scale_to_bounds`].
pub(crate) fn unscale_from_bounds(a: &[f64], spec: &WorldMdpSpec) -> Vec<f64> {
    a.iter()
        .zip(spec.action_low.iter().zip(&spec.action_high))
        .map(|(a, (lo, hi))| 2.0 * (a - lo) / (hi - lo) - 1.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionMask {
    /// Index of the weight matrix that was lesioned.
    pub layer_index: usize,
    /// Sorted `(row, col)` entries set to zero.
    pub zeroed_entries: Vec<(usize, usize)>,
    pub fraction: f64,
    pub seed: u64,
}

impl LesionMask {
    /// Picks `round(fraction * rows * cols)` distinct entries of weight
    /// matrix `layer_index` using `seed`.
    pub fn sample(net: &FeedforwardNet, fraction: f64, layer_index: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "lesion fraction must lie in [0, 1], got {fraction}"
            )));
        }
        if layer_index == 0 || layer_index + 1 >= net.num_layers() {
            return Err(Error::Config(format!(
                "layer {layer_index} is not a hidden-to-hidden matrix (valid: 1..{})",
                net.num_layers().saturating_sub(1)
            )));
        }
        let (rows, cols) = net.weights()[layer_index].dim();
        let total = rows * cols;
        let count = (fraction * total as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut zeroed_entries: Vec<(usize, usize)> = sample(&mut rng, total, count)
            .into_iter()
            .map(|k| (k / cols, k % cols))
            .collect();
        zeroed_entries.sort_unstable();
        Ok(LesionMask {
            layer_index,
            zeroed_entries,
            fraction,
            seed,
        })
    }

    fn validate(&self, net: &FeedforwardNet) -> Result<()> {
        if self.layer_index == 0 || self.layer_index + 1 >= net.num_layers() {
            return Err(Error::Config(format!("lesion layer {} out of range", self.layer_index)));
        }
        let (rows, cols) = net.weights()[self.layer_index].dim();
        let unique: BTreeSet<_> = self.zeroed_entries.iter().collect();
        if unique.len() != self.zeroed_entries.len() {
            return Err(Error::Config("duplicate lesion entries".into()));
        }
        if self.zeroed_entries.iter().any(|&(r, c)| r >= rows || c >= cols) {
            return Err(Error::Config("lesion entry outside the matrix".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulationSites {
    /// Activation layer receiving the stimulation (the output of the
    /// lesioned matrix).
    pub layer_index: usize,
    pub neuron_indices: Vec<usize>,
    pub stim_low: Vec<f64>,
    pub stim_high: Vec<f64>,
    /// Output dimensions the stimulated neurons are disconnected from, which
    /// makes those action components uncontrollable by stimulation.
    #[serde(default)]
    pub isolated_outputs: Vec<usize>,
}

impl StimulationSites {
    pub const DEFAULT_DIM: usize = 8;
    pub const DEFAULT_BOUND: f64 = 3.0;

    /// `stim_dim` distinct neurons of activation layer `layer_index`, with
    /// symmetric bounds `[-bound, bound]`.
    pub fn sample(width: usize, layer_index: usize, stim_dim: usize, bound: f64, seed: u64) -> Result<Self> {
        if stim_dim == 0 || stim_dim > width {
            return Err(Error::Config(format!(
                "cannot stimulate {stim_dim} neurons in a layer of width {width}"
            )));
        }
        if !(bound > 0.0) {
            return Err(Error::Config("stimulation bound must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut neuron_indices = sample(&mut rng, width, stim_dim).into_vec();
        neuron_indices.sort_unstable();
        Ok(StimulationSites {
            layer_index,
            neuron_indices,
            stim_low: vec![-bound; stim_dim],
            stim_high: vec![bound; stim_dim],
            isolated_outputs: Vec::new(),
        })
    }

    pub fn stim_dim(&self) -> usize {
        self.neuron_indices.len()
    }
}

/// Healthy brain with a lesion applied and stimulation sites attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "InjuredRecord", into = "InjuredRecord")]
pub struct InjuredBrain {
    base: HealthyBrain,
    mask: LesionMask,
    sites: StimulationSites,
    effective: FeedforwardNet,
    counter: QueryCounter,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InjuredRecord {
    base: HealthyBrain,
    mask: LesionMask,
    sites: StimulationSites,
}

impl From<InjuredBrain> for InjuredRecord {
    fn from(b: InjuredBrain) -> Self {
        InjuredRecord {
            base: b.base,
            mask: b.mask,
            sites: b.sites,
        }
    }
}

impl TryFrom<InjuredRecord> for InjuredBrain {
    type Error = Error;

    fn try_from(r: InjuredRecord) -> Result<Self> {
        InjuredBrain::assemble(r.base, r.mask, r.sites)
    }
}

impl PartialEq for InjuredBrain {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.mask == other.mask && self.sites == other.sites
    }
}

impl InjuredBrain {
    /// Lesions weight matrix `layer_index` of `healthy` and attaches
    /// stimulation sites on the layer that matrix feeds. The healthy brain is
    /// not modified.
    pub fn lesion(
        healthy: &HealthyBrain,
        fraction: f64,
        layer_index: usize,
        stim_dim: usize,
        stim_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        let net = &healthy.policy_net;
        let mask = LesionMask::sample(net, fraction, layer_index, seed)?;
        let width = net.layer_dims()[layer_index + 1];
        let sites = StimulationSites::sample(width, layer_index + 1, stim_dim, stim_bound, seed ^ 0x5171_u64)?;
        InjuredBrain::assemble(healthy.clone(), mask, sites)
    }

    /// Default construction: the 64x64 matrix, 8 sites, bounds +-3.
    pub fn with_defaults(healthy: &HealthyBrain, fraction: f64, seed: u64) -> Result<Self> {
        InjuredBrain::lesion(
            healthy,
            fraction,
            1,
            StimulationSites::DEFAULT_DIM,
            StimulationSites::DEFAULT_BOUND,
            seed,
        )
    }

    pub fn assemble(base: HealthyBrain, mask: LesionMask, sites: StimulationSites) -> Result<Self> {
        let net = &base.policy_net;
        mask.validate(net)?;
        if sites.layer_index != mask.layer_index + 1 {
            return Err(Error::Config(format!(
                "stimulation layer {} must follow the lesioned matrix {}",
                sites.layer_index, mask.layer_index
            )));
        }
        let width = net.layer_dims()[sites.layer_index];
        let unique: BTreeSet<_> = sites.neuron_indices.iter().collect();
        if unique.len() != sites.stim_dim() || sites.neuron_indices.iter().any(|&i| i >= width) {
            return Err(Error::Config(
                "stimulation sites must be distinct neurons of the layer".into(),
            ));
        }
        check_len("stimulation lower bounds", sites.stim_dim(), sites.stim_low.len())?;
        check_len("stimulation upper bounds", sites.stim_dim(), sites.stim_high.len())?;
        if sites.stim_low.iter().zip(&sites.stim_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("stimulation bounds must satisfy low < high".into()));
        }
        if sites.isolated_outputs.iter().any(|&k| k >= net.output_dim()) {
            return Err(Error::Config("isolated output out of range".into()));
        }
        if !sites.isolated_outputs.is_empty() && sites.layer_index + 1 != net.layer_dims().len() - 1 {
            return Err(Error::Config(
                "outputs can only be isolated when the stimulated layer feeds the output matrix".into(),
            ));
        }

        let mut effective = net.clone();
        let w = &mut effective.weights_mut()[mask.layer_index];
        for &(r, c) in &mask.zeroed_entries {
            w[[r, c]] = 0.0;
        }
        let out = &mut effective.weights_mut()[sites.layer_index];
        for &k in &sites.isolated_outputs {
            for &j in &sites.neuron_indices {
                out[[k, j]] = 0.0;
            }
        }
        Ok(InjuredBrain {
            base,
            mask,
            sites,
            effective,
            counter: QueryCounter::default(),
        })
    }

    /// Disconnects the stimulated neurons from output dimension `k`.
    pub fn isolate_output(self, k: usize) -> Result<Self> {
        let mut sites = self.sites;
        if !sites.isolated_outputs.contains(&k) {
            sites.isolated_outputs.push(k);
            sites.isolated_outputs.sort_unstable();
        }
        InjuredBrain::assemble(self.base, self.mask, sites)
    }

    pub fn healthy(&self) -> &HealthyBrain {
        &self.base
    }

    pub fn mask(&self) -> &LesionMask {
        &self.mask
    }

    pub fn sites(&self) -> &StimulationSites {
        &self.sites
    }

    /// The lesioned network actually evaluated by [`Brain::act`].
    pub fn effective_net(&self) -> &FeedforwardNet {
        &self.effective
    }

    pub fn env_spec(&self) -> &WorldMdpSpec {
        &self.base.env_spec
    }

    fn injected_action(&self, state: &[f64], stimulation: &[f64]) -> Result<Vec<f64>> {
        check_len("stimulation", self.sites.stim_dim(), stimulation.len())?;
        let stim = self.clip_stimulation(stimulation);
        let mut values = vec![0.0; self.effective.layer_dims()[self.sites.layer_index]];
        for (&j, s) in self.sites.neuron_indices.iter().zip(&stim) {
            values[j] = *s;
        }
        let y = self.effective.forward_injected(
            state,
            Some(Injection {
                layer: self.sites.layer_index,
                values: &values,
            }),
        )?;
        Ok(scale_to_bounds(&y, &self.base.env_spec))
    }
}

impl Brain for InjuredBrain {
    fn stim_dim(&self) -> usize {
        self.sites.stim_dim()
    }

    fn stim_low(&self) -> &[f64] {
        &self.sites.stim_low
    }

    fn stim_high(&self) -> &[f64] {
        &self.sites.stim_high
    }

    fn action_dim(&self) -> usize {
        self.base.env_spec.action_dim
    }

    fn act(&self, state: &[f64], stimulation: &[f64]) -> Result<Vec<f64>> {
        self.counter.bump();
        self.injected_action(state, stimulation)
    }

    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

/// `a = clip(W a_c + b)`, independent of the state. Useful as a ground
/// truth with a closed-form inverse.
#[derive(Debug, Clone)]
pub struct LinearBrain {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub stim_low: Vec<f64>,
    pub stim_high: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    counter: QueryCounter,
}

impl LinearBrain {
    pub fn new(w: Vec<Vec<f64>>, b: Vec<f64>, stim_bound: f64, action_bound: f64) -> Self {
        let (na, nc) = (w.len(), w[0].len());
        LinearBrain {
            w,
            b,
            stim_low: vec![-stim_bound; nc],
            stim_high: vec![stim_bound; nc],
            action_low: vec![-action_bound; na],
            action_high: vec![action_bound; na],
            counter: QueryCounter::default(),
        }
    }
}

impl Brain for LinearBrain {
    fn stim_dim(&self) -> usize {
        self.stim_low.len()
    }

    fn stim_low(&self) -> &[f64] {
        &self.stim_low
    }

    fn stim_high(&self) -> &[f64] {
        &self.stim_high
    }

    fn action_dim(&self) -> usize {
        self.w.len()
    }

    fn act(&self, _state: &[f64], stimulation: &[f64]) -> Result<Vec<f64>> {
        check_len("stimulation", self.stim_dim(), stimulation.len())?;
        self.counter.bump();
        let c = self.clip_stimulation(stimulation);
        Ok(self
            .w
            .iter()
            .zip(&self.b)
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|((row, b), (lo, hi))| (b + row.iter().zip(&c).map(|(w, x)| w * x).sum::<f64>()).clamp(*lo, *hi))
            .collect())
    }

    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

/// Brain for tabular worlds: a one-dimensional stimulation in `[-1, 1]` is
/// split into `table[s].len()` equal bins and each bin yields a fixed world
/// action. The state is read from a one-hot observation.
#[derive(Debug, Clone)]
pub struct TableBrain {
    pub table: Vec<Vec<f64>>,
    counter: QueryCounter,
}

impl TableBrain {
    pub fn new(table: Vec<Vec<f64>>) -> Self {
        TableBrain {
            table,
            counter: QueryCounter::default(),
        }
    }

    pub fn bin(&self, state: usize, stimulation: f64) -> usize {
        let n = self.table[state].len();
        let u = 0.5 * (stimulation.clamp(-1.0, 1.0) + 1.0);
        ((u * n as f64).floor() as usize).min(n - 1)
    }
}

impl Brain for TableBrain {
    fn stim_dim(&self) -> usize {
        1
    }

    fn stim_low(&self) -> &[f64] {
        &[-1.0]
    }

    fn stim_high(&self) -> &[f64] {
        &[1.0]
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn act(&self, state: &[f64], stimulation: &[f64]) -> Result<Vec<f64>> {
        check_len("stimulation", 1, stimulation.len())?;
        check_len("tabular state", self.table.len(), state.len())?;
        self.counter.bump();
        let s = state
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0;
        Ok(vec![self.table[s][self.bin(s, stimulation[0])]])
    }

    fn queries(&self) -> u64 {
        self.counter.get()
    }
}

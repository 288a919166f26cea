//! Experiment definitions, read from TOML. Unknown keys are rejected at
//! every level.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::MbpoConfig;
use crate::brain::StimulationSites;
use crate::copac::CopacConfig;
use crate::envs::World;
use crate::error::{Error, Result};
use crate::harness::evaluate::EvalProtocol;
use crate::sac::{Conservative, DistillConfig, SacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Copac,
    #[serde(rename = "copac_noqupdate")]
    CopacNoQUpdate,
    CopacRandom,
    Sac,
    Mbpo,
    Inverse,
    OfflineCopac,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Copac,
        Method::CopacNoQUpdate,
        Method::CopacRandom,
        Method::Sac,
        Method::Mbpo,
        Method::Inverse,
        Method::OfflineCopac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Copac => "copac",
            Method::CopacNoQUpdate => "copac_noqupdate",
            Method::CopacRandom => "copac_random",
            Method::Sac => "sac",
            Method::Mbpo => "mbpo",
            Method::Inverse => "inverse",
            Method::OfflineCopac => "offline_copac",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbPhase {
    /// World critic and healthy brain see the nominal dynamics; online
    /// episodes run in the perturbed environment.
    #[default]
    OnlineOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub param: String,
    pub relative_delta: f64,
    #[serde(default)]
    pub phase: PerturbPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Explicit checkpoint locations; default to files in `checkpoint_dir`
    /// named after the environment.
    pub world: Option<PathBuf>,
    pub healthy: Option<PathBuf>,
    pub offline_critic: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("results"),
            world: None,
            healthy: None,
            offline_critic: None,
        }
    }
}

impl Paths {
    fn or_default(&self, explicit: &Option<PathBuf>, env: &str, suffix: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.checkpoint_dir.join(format!("{env}_{suffix}.json")))
    }

    pub fn world_checkpoint(&self, env: &str) -> PathBuf {
        self.or_default(&self.world, env, "world")
    }

    pub fn healthy_checkpoint(&self, env: &str) -> PathBuf {
        self.or_default(&self.healthy, env, "healthy")
    }

    pub fn offline_critic_checkpoint(&self, env: &str) -> PathBuf {
        self.or_default(&self.offline_critic, env, "offline_critic")
    }

    /// Relative paths are taken relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.checkpoint_dir);
        fix(&mut self.output_dir);
        for p in [&mut self.world, &mut self.healthy, &mut self.offline_critic]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

/// Where the lesion and the stimulation sites go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrainSetup {
    /// Index of the hidden-to-hidden weight matrix that is lesioned and
    /// whose outputs receive stimulation.
    pub layer: usize,
    pub stim_dim: usize,
    pub stim_bound: f64,
    /// World-action indices the stimulation sites are cut off from.
    pub isolate_outputs: Vec<usize>,
}

impl Default for BrainSetup {
    fn default() -> Self {
        BrainSetup {
            layer: 1,
            stim_dim: StimulationSites::DEFAULT_DIM,
            stim_bound: StimulationSites::DEFAULT_BOUND,
            isolate_outputs: Vec::new(),
        }
    }
}

/// Logged data and training budget for the offline critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSetup {
    pub dataset_steps: usize,
    /// Share of logged actions drawn uniformly instead of from the world
    /// policy.
    pub random_fraction: f64,
    pub updates: usize,
    pub batch_size: usize,
    pub conservative: Conservative,
    pub seed: u64,
}

impl Default for OfflineSetup {
    fn default() -> Self {
        OfflineSetup {
            dataset_steps: 20_000,
            random_fraction: 0.5,
            updates: 20_000,
            batch_size: 256,
            conservative: Conservative::default(),
            seed: 7,
        }
    }
}

fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_episodes() -> usize {
    25
}

fn default_workers() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    /// Absolute values for named dynamics parameters.
    #[serde(default)]
    pub dynamics: BTreeMap<String, f64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_fractions")]
    pub lesion_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Online episodes per run. Overrides `copac.episodes`.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// When false the `wall_time_s` column is written as 0, which makes
    /// reruns byte-identical.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
    /// Write the final brain model and critic of every run.
    #[serde(default = "default_true")]
    pub save_artifacts: bool,
    #[serde(default)]
    pub brain: BrainSetup,
    #[serde(default)]
    pub eval: EvalProtocol,
    #[serde(default)]
    pub copac: CopacConfig,
    /// SAC settings for the online baselines.
    #[serde(default)]
    pub sac: SacConfig,
    /// SAC settings for world-MDP training.
    #[serde(default)]
    pub world: SacConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub mbpo: MbpoConfig,
    #[serde(default)]
    pub offline: OfflineSetup,
}

impl ExperimentConfig {
    /// A minimal valid config for `env`; everything else at defaults.
    pub fn for_env(env: &str) -> Self {
        let text = format!("env = {env:?}\nmethods = [\"copac\"]\nseeds = [0]\n");
        toml::from_str(&text).expect("minimal config parses")
    }

    /// Parses TOML, applying `key=value` overrides (dotted keys, values in
    /// TOML syntax with bare strings allowed) before deserializing.
    pub fn from_toml_str(text: &str, overrides: &[String], context: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, context, e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Parse {
            context: context.to_string(),
            line: 0,
            column: 0,
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text, overrides, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            config.paths.rebase(dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal_world()?;
        if self.methods.is_empty() || self.seeds.is_empty() || self.lesion_fractions.is_empty() {
            return Err(Error::Config(
                "methods, seeds and lesion_fractions must be non-empty".into(),
            ));
        }
        if let Some(f) = self.lesion_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Config(format!("lesion fraction {f} outside [0, 1]")));
        }
        if self.episodes == 0 || self.workers == 0 {
            return Err(Error::Config("episodes and workers must be at least 1".into()));
        }
        if self.brain.stim_dim == 0 || !(self.brain.stim_bound > 0.0) {
            return Err(Error::Config(
                "brain.stim_dim and brain.stim_bound must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.offline.random_fraction) {
            return Err(Error::Config("offline.random_fraction must lie in [0, 1]".into()));
        }
        self.online_world()?;
        self.copac_config(Method::Copac).validate()?;
        self.sac.validate()?;
        self.world.validate()?;
        self.mbpo.validate()?;
        self.eval_check()
    }

    fn eval_check(&self) -> Result<()> {
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be at least 1".into()));
        }
        Ok(())
    }

    /// The environment with dynamics overrides applied.
    pub fn nominal_world(&self) -> Result<World> {
        let mut w = World::by_name(&self.env)?;
        for (k, v) in &self.dynamics {
            w.set_param(k, *v)?;
        }
        Ok(w)
    }

    /// The environment online episodes run in.
    pub fn online_world(&self) -> Result<World> {
        let w = self.nominal_world()?;
        match &self.perturbation {
            Some(p) => match p.phase {
                PerturbPhase::OnlineOnly => w.perturb(&p.param, p.relative_delta),
            },
            None => Ok(w),
        }
    }

    /// CopAC settings for one of the CopAC-family methods.
    pub fn copac_config(&self, method: Method) -> CopacConfig {
        let mut c = self.copac.clone();
        c.episodes = self.episodes;
        match method {
            Method::CopacNoQUpdate => c.q_update_enabled = false,
            Method::CopacRandom => {
                c.q_update_enabled = false;
                c.q_max_enabled = false;
            }
            _ => {}
        }
        c
    }
}

fn toml_error(text: &str, context: &str, e: toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    Error::Parse {
        context: context.to_string(),
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

//! Sweeps over methods x lesion fractions x seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{run_mbpo, DynamicsModel, ModelSource};
use crate::brain::{Brain, HealthyBrain, InjuredBrain};
use crate::copac::{run_copac, run_inverse_baseline};
use crate::envs::World;
use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_expecting, save_checkpoint, Artifact};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::evaluate::{evaluate_policy, EpisodeStats};
use crate::harness::records::{write_csv, RunRecord};
use crate::sac::{
    collect_dataset, distill_healthy, sac_coproc_baseline, train_offline_conservative, train_world, CriticPair,
    GaussianPolicy, WorldTraining,
};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed shared by every method at one `(seed, fraction)` coordinate, so
/// methods face the same lesion and the same online randomness.
pub fn cell_seed(seed: u64, lesion_fraction: f64) -> u64 {
    splitmix64(seed ^ splitmix64(lesion_fraction.to_bits()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub lesion_fraction: f64,
    pub seed: u64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}_f{}_s{}", self.method, self.lesion_fraction, self.seed)
    }
}

/// Every cell of the sweep, methods outermost, seeds innermost.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in &config.methods {
        for &lesion_fraction in &config.lesion_fractions {
            for &seed in &config.seeds {
                out.push(Cell {
                    method,
                    lesion_fraction,
                    seed,
                });
            }
        }
    }
    out
}

/// Read-only inputs shared by all cells.
#[derive(Debug, Clone)]
pub struct SweepInputs {
    pub online: World,
    pub world_policy: GaussianPolicy,
    pub world_critic: CriticPair,
    pub healthy: HealthyBrain,
    /// Healthy brain's evaluation return in the online environment.
    pub healthy_return: f64,
    pub offline_critic: Option<CriticPair>,
}

impl SweepInputs {
    /// Assembles inputs from in-memory artifacts.
    pub fn new(
        config: &ExperimentConfig,
        world_policy: GaussianPolicy,
        world_critic: CriticPair,
        healthy: HealthyBrain,
        offline_critic: Option<CriticPair>,
    ) -> Result<Self> {
        let online = config.online_world()?;
        let healthy_return = evaluate_policy(&online, config.eval, |s| healthy.act(s))?;
        Ok(SweepInputs {
            online,
            world_policy,
            world_critic,
            healthy,
            healthy_return,
            offline_critic,
        })
    }

    /// Loads the world and healthy-brain checkpoints named by the config.
    /// The offline critic is loaded if present and otherwise trained and
    /// saved, when an offline method is requested.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let env = &config.env;
        let world_path = require(config.paths.world_checkpoint(env))?;
        let healthy_path = require(config.paths.healthy_checkpoint(env))?;
        let (policy, critics) = match load_expecting(&world_path, "world")? {
            Artifact::World {
                env: e,
                policy,
                critics,
                ..
            } => {
                check_env(&world_path, &e, env)?;
                (policy, critics)
            }
            _ => unreachable!("kind checked"),
        };
        let healthy = match load_expecting(&healthy_path, "healthy")? {
            Artifact::Healthy { env: e, brain } => {
                check_env(&healthy_path, &e, env)?;
                brain
            }
            _ => unreachable!("kind checked"),
        };
        let offline = if config.methods.contains(&Method::OfflineCopac) {
            let path = config.paths.offline_critic_checkpoint(env);
            if path.exists() {
                match load_expecting(&path, "offline_critic")? {
                    Artifact::OfflineCritic { critics, .. } => Some(critics),
                    _ => unreachable!("kind checked"),
                }
            } else {
                let (critics, policy) = train_offline_critic(config, &policy)?;
                save_checkpoint(
                    &path,
                    &Artifact::OfflineCritic {
                        env: env.clone(),
                        policy,
                        critics: critics.clone(),
                    },
                )?;
                Some(critics)
            }
        } else {
            None
        };
        SweepInputs::new(config, policy, critics, healthy, offline)
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Config(format!("missing checkpoint {}", path.display())))
    }
}

fn check_env(path: &Path, found: &str, want: &str) -> Result<()> {
    if found == want {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} was trained on {found}, but the experiment uses {want}",
            path.display()
        )))
    }
}

/// World-MDP SAC followed by distillation of the healthy brain, both in the
/// nominal environment.
pub fn train_world_and_healthy(config: &ExperimentConfig, seed: u64) -> Result<(WorldTraining, HealthyBrain)> {
    let env = config.nominal_world()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trained = train_world(&env, &config.world, &mut rng)?;
    let healthy = distill_healthy(&trained.policy, &env, config.distill, splitmix64(seed))?;
    Ok((trained, healthy))
}

/// Conservative critic from data logged by a mix of the world policy and
/// uniform actions in the nominal environment.
pub fn train_offline_critic(
    config: &ExperimentConfig,
    world_policy: &GaussianPolicy,
) -> Result<(CriticPair, GaussianPolicy)> {
    let env = config.nominal_world()?;
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.offline.seed);
    let data = collect_dataset(
        &env,
        Some(world_policy),
        config.offline.dataset_steps,
        config.offline.random_fraction,
        &mut rng,
    )?;
    let mut sac = config.world.clone();
    sac.steps = config.offline.updates;
    sac.batch_size = config.offline.batch_size;
    train_offline_conservative(
        &data,
        spec.action_low.clone(),
        spec.action_high.clone(),
        &sac,
        config.offline.conservative,
        &mut rng,
    )
}

/// The injured brain for one `(fraction, seed)` coordinate.
pub fn make_brain(
    config: &ExperimentConfig,
    healthy: &HealthyBrain,
    lesion_fraction: f64,
    seed: u64,
) -> Result<InjuredBrain> {
    let b = &config.brain;
    let mut brain = InjuredBrain::lesion(healthy, lesion_fraction, b.layer, b.stim_dim, b.stim_bound, seed)?;
    for &k in &b.isolate_outputs {
        brain = brain.isolate_output(k)?;
    }
    Ok(brain)
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub records: Vec<RunRecord>,
    pub artifact: Option<Artifact>,
    pub brain_queries: u64,
}

/// Runs one cell. Deterministic given the config, the inputs and the cell.
pub fn run_cell(config: &ExperimentConfig, inputs: &SweepInputs, cell: Cell) -> Result<CellOutput> {
    let seed = cell_seed(cell.seed, cell.lesion_fraction);
    let brain = make_brain(config, &inputs.healthy, cell.lesion_fraction, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env = &inputs.online;
    let (stats, artifact): (Vec<EpisodeStats>, Option<Artifact>) = match cell.method {
        Method::Copac | Method::CopacNoQUpdate | Method::CopacRandom | Method::OfflineCopac => {
            let critic = if cell.method == Method::OfflineCopac {
                inputs
                    .offline_critic
                    .as_ref()
                    .ok_or_else(|| Error::Config("offline_copac needs an offline critic".into()))?
            } else {
                &inputs.world_critic
            };
            let run = run_copac(
                env,
                &brain,
                critic,
                &config.copac_config(cell.method),
                config.eval,
                &mut rng,
            )?;
            let artifact = Artifact::CopacResult {
                model: run.model,
                critics: run.critics,
            };
            (run.stats, Some(artifact))
        }
        Method::Inverse => {
            let (stats, model) = run_inverse_baseline(
                env,
                &brain,
                &inputs.world_policy,
                &config.copac_config(Method::Inverse),
                config.eval,
                &mut rng,
            )?;
            (stats, Some(Artifact::InverseResult { model }))
        }
        Method::Sac => (
            sac_coproc_baseline(env, &brain, config.episodes, &config.sac, config.eval, &mut rng)?,
            None,
        ),
        Method::Mbpo => {
            let run = run_mbpo(
                env,
                &brain,
                config.episodes,
                &config.sac,
                &config.mbpo,
                ModelSource::<DynamicsModel>::Learned,
                config.eval,
                &mut rng,
            )?;
            (run.stats, None)
        }
    };
    let records = stats
        .iter()
        .map(|s| RunRecord {
            method: cell.method.name().to_string(),
            env: config.env.clone(),
            lesion_fraction: cell.lesion_fraction,
            seed: cell.seed,
            episode: s.episode,
            train_return: s.train_return,
            eval_return: s.eval_return,
            healthy_return: inputs.healthy_return,
            wall_time_s: if config.record_wall_time { s.elapsed_s } else { 0.0 },
        })
        .collect();
    Ok(CellOutput {
        records,
        artifact,
        brain_queries: brain.queries(),
    })
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    /// Successful rows in cell order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    pub cells: usize,
    pub csv_path: PathBuf,
}

impl SweepSummary {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Loads checkpoints and runs every cell on `config.workers` threads.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    config.validate()?;
    let inputs = SweepInputs::load(config)?;
    run_sweep_with(config, &inputs, &cells(config))
}

/// Runs the given cells. Each finished cell is written to its own staging
/// file; the staging files are merged into `runs.csv` in cell order once
/// all cells are done. A failing cell is recorded and the rest continue.
pub fn run_sweep_with(config: &ExperimentConfig, inputs: &SweepInputs, cells: &[Cell]) -> Result<SweepSummary> {
    let out_dir = &config.paths.output_dir;
    let staging = out_dir.join("staging");
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let artifacts = out_dir.join("artifacts");
    if config.save_artifacts {
        fs::create_dir_all(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<PathBuf, String>>>> = Mutex::new(vec![None; cells.len()]);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&cell) = cells.get(i) else { break };
        let outcome = (|| -> Result<PathBuf> {
            let out = run_cell(config, inputs, cell)?;
            let path = staging.join(format!("{i:05}_{}.csv", cell.label()));
            write_csv(&path, &out.records)?;
            if let (true, Some(a)) = (config.save_artifacts, &out.artifact) {
                save_checkpoint(&artifacts.join(format!("{}.json", cell.label())), a)?;
            }
            Ok(path)
        })();
        results.lock().expect("no poisoned workers")[i] = Some(outcome.map_err(|e| e.to_string()));
    };
    std::thread::scope(|s| {
        for _ in 0..config.workers.min(cells.len()).max(1) {
            s.spawn(worker);
        }
    });
    let results = results.into_inner().expect("no poisoned workers");
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in cells.iter().zip(results) {
        match r.expect("every cell visited") {
            Ok(path) => {
                records.extend(crate::harness::records::read_csv(&path)?);
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            Err(error) => failures.push(CellFailure { cell: *cell, error }),
        }
    }
    let _ = fs::remove_dir(&staging);
    let csv_path = out_dir.join("runs.csv");
    write_csv(&csv_path, &records)?;
    let failure_log = out_dir.join("failures.txt");
    if failures.is_empty() {
        let _ = fs::remove_file(&failure_log);
    } else {
        let text: String = failures
            .iter()
            .map(|f| format!("{}: {}\n", f.cell.label(), f.error))
            .collect();
        fs::write(&failure_log, text).map_err(|e| Error::io(&failure_log, e))?;
    }
    Ok(SweepSummary {
        records,
        failures,
        cells: cells.len(),
        csv_path,
    })
}

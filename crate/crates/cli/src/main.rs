use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use copac_core::brain::Brain;
use copac_core::harness::sweep::{make_brain, train_world_and_healthy};
use copac_core::harness::{
    evaluate_coprocessor, evaluate_policy, load_checkpoint, run_sweep, save_checkpoint, Artifact, EvalProtocol,
    ExperimentConfig, SweepSummary,
};
use copac_core::World;

#[derive(Parser)]
#[command(name = "copac", version, about = "Coprocessor actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Config file; without one the defaults for <ENV> are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set copac.candidates=512`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the world policy and critic, distill the healthy brain, and
    /// save both checkpoints.
    TrainWorld {
        env: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Lesion the healthy brain and save the injured brain.
    MakeBrain {
        env: String,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        /// Output file (default: next to the healthy checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train missing checkpoints, then run the sweep described by the config.
    Run {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate or describe a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a sweep from existing checkpoints.
    Sweep {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns false when the command ran but some sweep cells failed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::TrainWorld { env, seed, overrides } => {
            let config = env_config(&env, &overrides)?;
            train_and_save(&config, seed)?;
            Ok(true)
        }
        Command::MakeBrain {
            env,
            fraction,
            seed,
            out,
            overrides,
        } => {
            let config = env_config(&env, &overrides)?;
            make_and_save(&config, fraction, seed, out)?;
            Ok(true)
        }
        Command::Run {
            config,
            world_seed,
            set,
        } => {
            let config = ExperimentConfig::load(&config, &set)?;
            if !config.paths.world_checkpoint(&config.env).exists()
                || !config.paths.healthy_checkpoint(&config.env).exists()
            {
                train_and_save(&config, world_seed)?;
            }
            report(run_sweep(&config)?)
        }
        Command::Sweep { config, set } => {
            let config = ExperimentConfig::load(&config, &set)?;
            report(run_sweep(&config)?)
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            describe(&checkpoint, EvalProtocol { episodes, seed })?;
            Ok(true)
        }
    }
}

fn env_config(env: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let config = match &overrides.config {
        Some(path) => ExperimentConfig::load(path, &overrides.set)?,
        None => {
            let text = format!("env = {env:?}\nmethods = [\"copac\"]\nseeds = [0]\n");
            ExperimentConfig::from_toml_str(&text, &overrides.set, "defaults")?
        }
    };
    if config.env != env {
        bail!("config is for env {:?}, not {env:?}", config.env);
    }
    Ok(config)
}

fn train_and_save(config: &ExperimentConfig, seed: u64) -> Result<()> {
    let env = &config.env;
    eprintln!("training world for {env} ({} steps)", config.world.steps);
    let (world, healthy) = train_world_and_healthy(config, seed)?;
    let nominal = config.nominal_world()?;
    let policy_return = evaluate_policy(&nominal, config.eval, |s| world.policy.mean_action(s))?;
    let healthy_return = evaluate_policy(&nominal, config.eval, |s| healthy.act(s))?;
    let world_path = config.paths.world_checkpoint(env);
    save_checkpoint(
        &world_path,
        &Artifact::World {
            env: env.clone(),
            config: config.world.clone(),
            policy: world.policy,
            critics: world.critics,
        },
    )?;
    let healthy_path = config.paths.healthy_checkpoint(env);
    save_checkpoint(
        &healthy_path,
        &Artifact::Healthy {
            env: env.clone(),
            brain: healthy,
        },
    )?;
    println!("world policy return {policy_return:.2} -> {}", world_path.display());
    println!("healthy brain return {healthy_return:.2} -> {}", healthy_path.display());
    Ok(())
}

fn make_and_save(config: &ExperimentConfig, fraction: f64, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let path = config.paths.healthy_checkpoint(&config.env);
    let healthy = match load_checkpoint(&path)? {
        Artifact::Healthy { brain, .. } => brain,
        other => bail!("{} holds a {} artifact, expected healthy", path.display(), other.kind()),
    };
    let brain = make_brain(config, &healthy, fraction, seed)?;
    let out = out.unwrap_or_else(|| path.with_file_name(format!("{}_brain_f{fraction}_s{seed}.json", config.env)));
    let unstimulated = evaluate_coprocessor(&config.nominal_world()?, &brain, config.eval, |_| {
        Ok(vec![0.0; brain.stim_dim()])
    })?;
    let zeroed = brain.mask().zeroed_entries.len();
    save_checkpoint(
        &out,
        &Artifact::Injured {
            env: config.env.clone(),
            brain,
        },
    )?;
    println!(
        "zeroed {zeroed} weights, unstimulated return {unstimulated:.2} -> {}",
        out.display()
    );
    Ok(())
}

fn describe(path: &Path, eval: EvalProtocol) -> Result<()> {
    let artifact = load_checkpoint(path)?;
    match &artifact {
        Artifact::World { env, policy, .. } => {
            let world = World::by_name(env)?;
            let r = evaluate_policy(&world, eval, |s| policy.mean_action(s))?;
            println!(
                "world policy for {env}: mean return {r:.2} over {} episodes",
                eval.episodes
            );
        }
        Artifact::Healthy { env, brain } => {
            let world = World::by_name(env)?;
            let r = evaluate_policy(&world, eval, |s| brain.act(s))?;
            println!(
                "healthy brain for {env}: mean return {r:.2} over {} episodes",
                eval.episodes
            );
        }
        Artifact::Injured { env, brain } => {
            let world = World::by_name(env)?;
            let r = evaluate_coprocessor(&world, brain, eval, |_| Ok(vec![0.0; brain.stim_dim()]))?;
            let w = &brain.healthy().policy_net.weights()[brain.mask().layer_index];
            let total = w.nrows() * w.ncols();
            println!(
                "injured brain for {env}: {}/{total} weights zeroed, unstimulated mean return {r:.2}",
                brain.mask().zeroed_entries.len()
            );
        }
        Artifact::OfflineCritic { env, .. } => println!("offline critic for {env}"),
        Artifact::Net { net } => println!("network {:?}", net.layer_dims()),
        Artifact::CopacResult { model, .. } => println!("copac brain model {:?}", model.net.layer_dims()),
        Artifact::InverseResult { model } => println!("inverse brain model {:?}", model.net.layer_dims()),
    }
    Ok(())
}

fn report(summary: SweepSummary) -> Result<bool> {
    println!(
        "{} cells, {} records -> {}",
        summary.cells,
        summary.records.len(),
        summary.csv_path.display()
    );
    for f in &summary.failures {
        eprintln!("cell {} failed: {}", f.cell.label(), f.error);
    }
    Ok(summary.succeeded())
}

//! JSON checkpoints. Every artifact is tagged with its `kind`; nets carry
//! their layer dimensions and row-major weights, and floats are written with
//! shortest round-trip precision so reloading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brain::{HealthyBrain, InjuredBrain};
use crate::copac::{BrainModel, InverseBrainModel};
use crate::error::{Error, Result};
use crate::nn::FeedforwardNet;
use crate::sac::{CriticPair, GaussianPolicy, SacConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Artifact {
    Net {
        net: FeedforwardNet,
    },
    /// World-MDP policy and critic.
    World {
        env: String,
        config: SacConfig,
        policy: GaussianPolicy,
        critics: CriticPair,
    },
    /// Critic learned from logged data.
    OfflineCritic {
        env: String,
        policy: GaussianPolicy,
        critics: CriticPair,
    },
    Healthy {
        env: String,
        brain: HealthyBrain,
    },
    Injured {
        env: String,
        brain: InjuredBrain,
    },
    /// Final brain model and recalibrated critic of one CopAC run.
    CopacResult {
        model: BrainModel,
        critics: CriticPair,
    },
    InverseResult {
        model: InverseBrainModel,
    },
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Net { .. } => "net",
            Artifact::World { .. } => "world",
            Artifact::OfflineCritic { .. } => "offline_critic",
            Artifact::Healthy { .. } => "healthy",
            Artifact::Injured { .. } => "injured",
            Artifact::CopacResult { .. } => "copac_result",
            Artifact::InverseResult { .. } => "inverse_result",
        }
    }
}

pub fn to_json(artifact: &Artifact) -> String {
    serde_json::to_string_pretty(artifact).expect("artifacts serialize")
}

pub fn from_json(text: &str, context: &str) -> Result<Artifact> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a half-written checkpoint.
pub fn save_checkpoint(path: &Path, artifact: &Artifact) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, to_json(artifact)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Artifact> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, &path.display().to_string())
}

/// Loads `path` and checks that it holds an artifact of `kind`.
pub fn load_expecting(path: &Path, kind: &str) -> Result<Artifact> {
    let a = load_checkpoint(path)?;
    if a.kind() != kind {
        return Err(Error::Config(format!(
            "{} holds a {} checkpoint, expected {kind}",
            path.display(),
            a.kind()
        )));
    }
    Ok(a)
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, RunConfig};
use crate::{Agent, Error, Result, Rng};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned snapshot of a run: all parameters, codebook, optimizer state,
/// the training rng and the config it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub env: String,
    pub env_step: usize,
    pub config_hash: String,
    pub param_hash: String,
    pub config: RunConfig,
    pub agent: Agent,
    pub rng: Rng,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, env_step: usize, agent: &Agent, rng: &Rng) -> Result<Self> {
        Ok(Self {
            version: CHECKPOINT_VERSION,
            env: config.env.clone(),
            env_step,
            config_hash: config.hash()?,
            param_hash: agent.param_hash(),
            config: config.clone(),
            agent: agent.clone(),
            rng: rng.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads and verifies the version and parameter hash.
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ckpt.version
            )));
        }
        if ckpt.agent.param_hash() != ckpt.param_hash {
            return Err(Error::Checkpoint(format!("{}: parameter hash mismatch", path.display())));
        }
        Ok(ckpt)
    }

    /// Errors unless the checkpoint was trained on `env_id`.
    pub fn check_env(&self, env_id: &str) -> Result<()> {
        if self.env != env_id {
            return Err(Error::Checkpoint(format!(
                "checkpoint trained on {}, not {env_id}",
                self.env
            )));
        }
        Ok(())
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, sha256_hex};
use crate::critic::CriticConfig;
use crate::diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::envs::env_ids;
use crate::{Error, PolicyNetworkConfig, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::VariancePreserving,
            beta_start: 0.1,
            beta_end: 10.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, steps: usize) -> Result<NoiseSchedule> {
        make_schedule(steps, self.beta_start, self.beta_end, self.kind)
    }
}

/// Everything a run needs, stored as one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub output_dir: PathBuf,
    /// Episodes per evaluation.
    pub eval_episodes: usize,
    /// Environment steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub train: TrainConfig,
    pub network: PolicyNetworkConfig,
    pub critic: CriticConfig,
    pub schedule: ScheduleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "hard_move_n4_single_step".into(),
            output_dir: PathBuf::from("runs/default"),
            eval_episodes: 50,
            checkpoint_interval: 10_000,
            train: TrainConfig::default(),
            network: PolicyNetworkConfig::default(),
            critic: CriticConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_file(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !env_ids().iter().any(|id| id == &self.env) {
            return Err(Error::UnknownEnv(self.env.clone()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be at least 1".into()));
        }
        self.train.validate()?;
        self.network.validate()?;
        if self.critic.hidden.is_empty() {
            return Err(Error::InvalidConfig("critic hidden widths must be nonempty".into()));
        }
        self.schedule.build(self.train.diffusion_steps)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut config = RunConfig::default();
        config.train.ablation.deterministic_policy = true;
        config.train.seed = 17;
        let text = config.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), config);
        assert_eq!(config.hash().unwrap(), RunConfig::from_toml(&text).unwrap().hash().unwrap());
    }

    #[test]
    fn partial_files_take_defaults() {
        let config = RunConfig::from_toml("env = \"hard_move_n6\"\n[train]\nseed = 3\n").unwrap();
        assert_eq!(config.env, "hard_move_n6");
        assert_eq!(config.train.seed, 3);
        assert_eq!(config.train.gamma, TrainConfig::default().gamma);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("env = \"nope\"\n"),
            Err(Error::UnknownEnv(_))
        ));
        assert!(RunConfig::from_toml("eval_episodes = 0\n").is_err());
        assert!(RunConfig::from_toml("[train]\ngamma = 1.0\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }
}

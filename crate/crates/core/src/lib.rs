//! Cooperative hybrid diffusion policies for parameterized-action RL.
//!
//! A discrete agent denoises a latent vector that a Q-guided codebook
//! quantizes into a discrete action; a continuous agent, conditioned on the
//! selected codeword, denoises the continuous parameters. Both are trained
//! with a sequential update scheme against twin critics.
//!
//! Module map:
//! - [`diffusion`]: noise schedules, forward noising, reverse steps, sampling and the behavior-cloning loss.
//! - [`policies`]: the discrete-latent and continuous diffusion policies.
//! - [`codebook`]: the learnable embedding table and nearest-codeword quantization.
//! - [`critic`]: twin Q-networks, double-Q targets and the Bellman loss.
//! - [`trainer`]: replay buffer, the agent, and the sequential update scheme.
//! - [`envs`]: parameterized-action environments.
//! - [`harness`]: configuration, training/evaluation loops, analysis and plotting.

pub mod codebook;
pub mod critic;
pub mod diffusion;
pub mod envs;
pub mod harness;
pub mod nn;
pub mod policies;
pub mod trainer;

mod error;

pub use codebook::Codebook;
pub use critic::TwinCritic;
pub use diffusion::{NoiseSchedule, ScheduleKind};
pub use envs::{Env, EnvSpec, HybridAction, StepResult};
pub use error::{Error, Result};
pub use policies::{ContinuousPolicy, DiscreteLatentPolicy, PolicyNetworkConfig};
pub use trainer::{Agent, ReplayBuffer, TrainConfig, Transition};

/// Deterministic random source used throughout training and evaluation.
pub type Rng = rand_chacha::ChaCha8Rng;

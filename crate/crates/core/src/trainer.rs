//! Replay buffer, the two-agent model, and the sequential update scheme.
//!
//! One training iteration runs, in order:
//! 1. a critic update towards the double-Q target;
//! 2. the discrete update (Step 1): behavior cloning of buffered latents plus
//!    Q-improvement of freshly sampled latents paired with buffered actions;
//! 3. the continuous + codebook update (Step 2): behavior cloning of buffered
//!    actions plus Q-improvement of actions conditioned on the codeword that
//!    the just-updated discrete policy selects. The latent entering Q is
//!    stop-gradient, so nothing reaches the discrete policy;
//! 4. Polyak updates of the critic and policy targets.
//!
//! Step functions return [`Gradients`] for every parameter group so the
//! isolation contracts can be checked directly: a step leaves every group it
//! does not own at exactly zero.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::Codebook;
use crate::critic::{CriticConfig, MinQ, NextActionSource, TwinCritic};
use crate::diffusion::NoiseSchedule;
use crate::envs::{EnvSpec, HybridAction};
use crate::nn::{polyak, Adam};
use crate::policies::{ContinuousPolicy, DiscreteLatentPolicy, Generator, PolicyNetworkConfig};
use crate::{Error, Result};

/// Lower bound on the `mean |Q|` denominator of the improvement weight.
pub const ALPHA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Replace both diffusion samplers with tanh-squashed feedforward maps.
    pub deterministic_policy: bool,
    /// Drop the codebook: the discrete latent is a K-way score vector,
    /// `k = argmax`, and the latent itself conditions the continuous policy.
    pub no_codebook: bool,
    /// Update both policies simultaneously from buffered counterpart data.
    pub concurrent_update: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Policy-improvement weight `eta`.
    pub eta: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub lr_discrete: f64,
    pub lr_continuous: f64,
    pub lr_codebook: f64,
    pub lr_critic: f64,
    pub tau: f64,
    /// Diffusion steps `N`.
    pub diffusion_steps: usize,
    /// Codeword dimension `d_e`.
    pub latent_dim: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    /// Environment steps between gradient iterations once past warmup.
    pub train_every: usize,
    pub eval_interval: usize,
    /// Std of Gaussian noise added to continuous actions while collecting.
    pub exploration_noise: f64,
    pub ablation: AblationFlags,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            eta: 5.0,
            batch_size: 64,
            buffer_capacity: 1_000_000,
            lr_discrete: 3e-4,
            lr_continuous: 3e-4,
            lr_codebook: 1e-5,
            lr_critic: 3e-4,
            tau: 0.005,
            diffusion_steps: 15,
            latent_dim: 8,
            total_steps: 50_000,
            warmup_steps: 2_000,
            train_every: 1,
            eval_interval: 5_000,
            exploration_noise: 0.0,
            ablation: AblationFlags::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return bad(format!("eta {} must be positive", self.eta));
        }
        for (name, lr) in [
            ("lr_discrete", self.lr_discrete),
            ("lr_continuous", self.lr_continuous),
            ("lr_codebook", self.lr_codebook),
            ("lr_critic", self.lr_critic),
        ] {
            if !(0.0..).contains(&lr) {
                return bad(format!("{name} {lr} must be non-negative"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch size must be positive and fit in the buffer".into());
        }
        if self.diffusion_steps == 0 || self.latent_dim == 0 || self.train_every == 0 {
            return bad("diffusion steps, latent dim and train_every must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!("warmup {} exceeds total steps {}", self.warmup_steps, self.total_steps));
        }
        if self.eval_interval == 0 {
            return bad("eval interval must be positive".into());
        }
        if !(0.0..).contains(&self.exploration_noise) {
            return bad("exploration noise must be non-negative".into());
        }
        Ok(())
    }
}

/// One replay record. `latent` is the pre-quantization output of the
/// discrete policy; `k` is the discrete action that was executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub latent: Vec<f64>,
    pub k: usize,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub latents: Array2<f64>,
    pub indices: Vec<usize>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(records: &[&Transition]) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyBatch)?;
        let stack = |f: &dyn Fn(&Transition) -> &[f64], width: usize| -> Result<Array2<f64>> {
            let mut out = Array2::zeros((records.len(), width));
            for (mut row, t) in out.rows_mut().into_iter().zip(records) {
                let src = f(t);
                if src.len() != width {
                    return Err(Error::DimensionMismatch {
                        what: "transition field",
                        expected: width,
                        actual: src.len(),
                    });
                }
                row.assign(&ndarray::ArrayView1::from(src));
            }
            Ok(out)
        };
        Ok(Self {
            states: stack(&|t| &t.state, first.state.len())?,
            latents: stack(&|t| &t.latent, first.latent.len())?,
            indices: records.iter().map(|t| t.k).collect(),
            actions: stack(&|t| &t.action, first.action.len())?,
            rewards: records.iter().map(|t| t.reward).collect(),
            next_states: stack(&|t| &t.next_state, first.next_state.len())?,
            dones: records.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            data: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `batch_size` distinct records, uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.data.len() < batch_size {
            return Err(Error::InsufficientData {
                have: self.data.len(),
                need: batch_size,
            });
        }
        let picks = rand::seq::index::sample(rng, self.data.len(), batch_size);
        let records: Vec<&Transition> = picks.iter().map(|i| &self.data[i]).collect();
        Batch::from_transitions(&records)
    }
}

/// Gradients for every trainable parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub discrete: Vec<f64>,
    pub continuous: Vec<f64>,
    pub codebook: Vec<f64>,
    pub critic: [Vec<f64>; 2],
}

impl Gradients {
    pub fn zeros(agent: &Agent) -> Self {
        Self {
            discrete: vec![0.0; agent.discrete.generator().params().len()],
            continuous: vec![0.0; agent.continuous.generator().params().len()],
            codebook: vec![0.0; agent.codebook.as_ref().map_or(0, |c| c.params().len())],
            critic: [
                vec![0.0; agent.critic.online(0).num_params()],
                vec![0.0; agent.critic.online(1).num_params()],
            ],
        }
    }

    pub fn is_zero(group: &[f64]) -> bool {
        group.iter().all(|&g| g == 0.0)
    }
}

/// Anything that can score `(state, latent, action)` and differentiate the
/// twin minimum with respect to its latent and action inputs.
pub trait ActionValue {
    fn min_q(&self, s: ArrayView2<'_, f64>, e: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, upstream: f64) -> Result<MinQ>;
}

impl ActionValue for TwinCritic {
    fn min_q(&self, s: ArrayView2<'_, f64>, e: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, upstream: f64) -> Result<MinQ> {
        self.min_q_input_grad(s, e, a, upstream)
    }
}

/// Output of [`Agent::act`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub latent: Vec<f64>,
    pub k: usize,
    pub action: Vec<f64>,
}

impl ActOutput {
    pub fn hybrid(&self) -> HybridAction {
        HybridAction::new(self.k, self.action.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Optimizers {
    discrete: Adam,
    continuous: Adam,
    codebook: Adam,
    critic: [Adam; 2],
}

/// Which part of [`train_iteration_with_hook`] just finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Critic,
    Discrete,
    ContinuousAndCodebook,
    Targets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub critic_loss: f64,
    pub discrete_loss: f64,
    pub continuous_loss: f64,
    pub alpha: f64,
    pub mean_abs_q: f64,
    /// Sparse `(k, count)` histogram of the discrete actions chosen in Step 2.
    pub selections: Vec<(usize, u64)>,
}

/// Both agents, the codebook, the critics, their targets and optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agent {
    pub discrete: DiscreteLatentPolicy,
    pub continuous: ContinuousPolicy,
    /// `None` under the no-codebook ablation.
    pub codebook: Option<Codebook>,
    pub critic: TwinCritic,
    pub target_discrete: DiscreteLatentPolicy,
    pub target_continuous: ContinuousPolicy,
    optimizers: Optimizers,
    num_discrete: usize,
    ablation: AblationFlags,
    gamma: f64,
    eta: f64,
    tau: f64,
    exploration_noise: f64,
    iterations: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        env: &EnvSpec,
        config: &TrainConfig,
        network: &PolicyNetworkConfig,
        critic_config: &CriticConfig,
        schedule: NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        network.validate()?;
        if schedule.steps() != config.diffusion_steps {
            return Err(Error::InvalidConfig(format!(
                "schedule has {} steps, config asks for {}",
                schedule.steps(),
                config.diffusion_steps
            )));
        }
        let ablation = config.ablation;
        let latent_dim = if ablation.no_codebook {
            env.num_discrete
        } else {
            config.latent_dim
        };
        let obs = env.obs_dim;
        let (dg, cg) = if ablation.deterministic_policy {
            (
                Generator::deterministic(latent_dim, obs, network, rng)?,
                Generator::deterministic(env.action_dim, obs + latent_dim, network, rng)?,
            )
        } else {
            (
                Generator::diffusion(latent_dim, obs, network, schedule.clone(), rng)?,
                Generator::diffusion(env.action_dim, obs + latent_dim, network, schedule, rng)?,
            )
        };
        let discrete = DiscreteLatentPolicy::new(dg, obs)?;
        let continuous = ContinuousPolicy::new(cg, obs, latent_dim)?;
        let codebook = if ablation.no_codebook {
            None
        } else {
            Some(Codebook::init(env.num_discrete, latent_dim, rng)?)
        };
        let critic = TwinCritic::new(obs, latent_dim, env.action_dim, critic_config, rng)?;
        let optimizers = Optimizers {
            discrete: Adam::new(discrete.generator().params().len(), config.lr_discrete),
            continuous: Adam::new(continuous.generator().params().len(), config.lr_continuous),
            codebook: Adam::new(codebook.as_ref().map_or(0, |c| c.params().len()), config.lr_codebook),
            critic: [
                Adam::new(critic.online(0).num_params(), config.lr_critic),
                Adam::new(critic.online(1).num_params(), config.lr_critic),
            ],
        };
        Ok(Self {
            target_discrete: discrete.clone(),
            target_continuous: continuous.clone(),
            discrete,
            continuous,
            codebook,
            critic,
            optimizers,
            num_discrete: env.num_discrete,
            ablation,
            gamma: config.gamma,
            eta: config.eta,
            tau: config.tau,
            exploration_noise: config.exploration_noise,
            iterations: 0,
        })
    }

    pub fn ablation(&self) -> AblationFlags {
        self.ablation
    }

    pub fn num_discrete(&self) -> usize {
        self.num_discrete
    }

    pub fn latent_dim(&self) -> usize {
        self.discrete.latent_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.discrete.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.continuous.action_dim()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Overrides every learning rate (used to freeze or thaw training).
    pub fn set_learning_rates(&mut self, discrete: f64, continuous: f64, codebook: f64, critic: f64) {
        self.optimizers.discrete.lr = discrete;
        self.optimizers.continuous.lr = continuous;
        self.optimizers.codebook.lr = codebook;
        for opt in &mut self.optimizers.critic {
            opt.lr = critic;
        }
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau;
    }

    /// Discrete indices and conditioning vectors for a batch of latents:
    /// nearest codewords, or argmax with the latent itself as condition.
    pub fn select(&self, latents: ArrayView2<'_, f64>) -> Result<(Vec<usize>, Array2<f64>)> {
        match &self.codebook {
            Some(cb) => cb.quantize_batch(latents),
            None => {
                let idx = latents.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
                Ok((idx, latents.to_owned()))
            }
        }
    }

    /// Conditioning vectors for the discrete actions recorded in a batch.
    fn recorded_condition(&self, batch: &Batch) -> Array2<f64> {
        match &self.codebook {
            Some(cb) => cb.gather(&batch.indices),
            None => batch.latents.clone(),
        }
    }

    /// Latent → discrete action → continuous action for one state.
    /// `explore` adds the configured Gaussian action noise.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R, explore: bool) -> Result<ActOutput> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row vector");
        let e = self.discrete.sample_latent(s, rng)?;
        let (idx, cond) = self.select(e.view())?;
        let a = self.continuous.sample_action(s, cond.view(), rng)?;
        let mut action = a.row(0).to_vec();
        if explore && self.exploration_noise > 0.0 {
            let normal = Normal::new(0.0, self.exploration_noise).expect("positive std");
            for v in &mut action {
                *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(ActOutput {
            latent: e.row(0).to_vec(),
            k: idx[0],
            action,
        })
    }

    /// A uniformly random hybrid action, recorded with a latent that
    /// selects the same discrete action.
    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> ActOutput {
        let k = rng.random_range(0..self.num_discrete);
        let action = (0..self.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let latent = match &self.codebook {
            Some(cb) => cb.row(k).mapv(|v| v.clamp(-1.0, 1.0)).to_vec(),
            None => {
                let mut e: Vec<f64> = (0..self.num_discrete).map(|_| rng.random_range(-1.0..1.0)).collect();
                e[k] = 1.0;
                e
            }
        };
        ActOutput { latent, k, action }
    }

    /// SHA-256 over every parameter and target, little-endian.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |xs: &[f64]| {
            for x in xs {
                hasher.update(x.to_le_bytes());
            }
        };
        feed(self.discrete.generator().params());
        feed(self.continuous.generator().params());
        if let Some(cb) = &self.codebook {
            feed(cb.params());
        }
        for j in 0..2 {
            feed(self.critic.online(j).params());
            feed(self.critic.target(j).params());
        }
        feed(self.target_discrete.generator().params());
        feed(self.target_continuous.generator().params());
        hex::encode(hasher.finalize())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Samples next actions from the target policies, quantizing with the live
/// codebook.
struct TargetPolicies<'a> {
    agent: &'a Agent,
}

impl NextActionSource for TargetPolicies<'_> {
    fn next_actions(
        &self,
        next_states: ArrayView2<'_, f64>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let e = self.agent.target_discrete.sample_latent(next_states, rng)?;
        let (_, cond) = self.agent.select(e.view())?;
        let a = self.agent.target_continuous.sample_action(next_states, cond.view(), rng)?;
        Ok((e, a))
    }
}

/// `eta / max(mean |Q|, ALPHA_FLOOR)` over the batch and both critics.
pub fn alpha_coefficient(critic: &TwinCritic, batch: &Batch, eta: f64) -> Result<f64> {
    let mean_abs = critic.mean_abs_q(batch.states.view(), batch.latents.view(), batch.actions.view())?;
    Ok(eta / mean_abs.max(ALPHA_FLOOR))
}

/// Critic gradients towards the double-Q target. Returns `(loss, grads)`.
pub fn critic_update_grads<R: Rng>(agent: &Agent, batch: &Batch, rng: &mut R) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(agent);
    let targets = TargetPolicies { agent };
    let y = agent.critic.td_target(
        batch.rewards.view(),
        batch.next_states.view(),
        &batch.dones,
        agent.gamma,
        &targets,
        rng,
    )?;
    let [g0, g1] = &mut grads.critic;
    let loss = agent.critic.critic_loss_grad(
        batch.states.view(),
        batch.latents.view(),
        batch.actions.view(),
        y.view(),
        [g0.as_mut_slice(), g1.as_mut_slice()],
    )?;
    Ok((loss, grads))
}

/// Step 1: `L = L_bc(theta_d) - alpha * mean min Q(s, e ~ pi_d(s), a_buffer)`.
/// Only the discrete group is populated.
pub fn step1_grads<R: Rng + ?Sized>(
    agent: &Agent,
    q: &dyn ActionValue,
    batch: &Batch,
    alpha: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = Gradients::zeros(agent);
    let generator = agent.discrete.generator();
    let bc = generator.bc_loss_grad(batch.states.view(), batch.latents.view(), rng, &mut grads.discrete)?;
    let (e, trace) = agent.discrete.sample_latent_traced(batch.states.view(), rng)?;
    let n = batch.len() as f64;
    let minq = q.min_q(batch.states.view(), e.view(), batch.actions.view(), -alpha / n)?;
    generator.backward(&trace, minq.grad_latent.view(), &mut grads.discrete);
    let q_mean = minq.values.mean().unwrap_or(0.0);
    Ok((bc - alpha * q_mean, grads))
}

/// Step 2: `L = L_bc(theta_c) - alpha * mean min Q(s, sg(e'), a ~ pi_c(s, e_k))`.
///
/// `e'` comes from the current discrete policy, or from the buffer when
/// `use_buffered_latent` is set (concurrent ablation). Only the continuous
/// and codebook groups are populated; the codebook receives gradient only on
/// rows selected in this batch. Also returns the selected indices.
pub fn step2_grads<R: Rng + ?Sized>(
    agent: &Agent,
    q: &dyn ActionValue,
    batch: &Batch,
    alpha: f64,
    use_buffered_latent: bool,
    rng: &mut R,
) -> Result<(f64, Gradients, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = Gradients::zeros(agent);
    let generator = agent.continuous.generator();
    let recorded = agent.recorded_condition(batch);
    let bc_cond = agent.continuous.condition(batch.states.view(), recorded.view())?;
    let bc = generator.bc_loss_grad(bc_cond.view(), batch.actions.view(), rng, &mut grads.continuous)?;

    let latents = if use_buffered_latent {
        batch.latents.clone()
    } else {
        agent.discrete.sample_latent(batch.states.view(), rng)?
    };
    let (indices, codewords) = agent.select(latents.view())?;
    let (a, trace) = agent
        .continuous
        .sample_action_traced(batch.states.view(), codewords.view(), rng)?;
    let n = batch.len() as f64;
    let minq = q.min_q(batch.states.view(), latents.view(), a.view(), -alpha / n)?;
    let grad_codewords = agent.continuous.backward(&trace, minq.grad_action.view(), &mut grads.continuous);
    if let Some(cb) = &agent.codebook {
        cb.scatter_grad(&indices, grad_codewords.view(), &mut grads.codebook);
    }
    let q_mean = minq.values.mean().unwrap_or(0.0);
    Ok((bc - alpha * q_mean, grads, indices))
}

impl Agent {
    fn apply_critic(&mut self, grads: &Gradients) {
        for j in 0..2 {
            self.optimizers.critic[j].step(self.critic.online_mut(j).params_mut(), &grads.critic[j]);
        }
    }

    fn apply_discrete(&mut self, grads: &Gradients) {
        self.optimizers
            .discrete
            .step(self.discrete.generator_mut().params_mut(), &grads.discrete);
    }

    fn apply_continuous_and_codebook(&mut self, grads: &Gradients) {
        self.optimizers
            .continuous
            .step(self.continuous.generator_mut().params_mut(), &grads.continuous);
        if let Some(cb) = &mut self.codebook {
            self.optimizers.codebook.step(cb.params_mut(), &grads.codebook);
        }
    }

    fn update_targets(&mut self) -> Result<()> {
        self.critic.polyak_update(self.tau)?;
        polyak(
            self.target_discrete.generator_mut().params_mut(),
            self.discrete.generator().params(),
            self.tau,
        );
        polyak(
            self.target_continuous.generator_mut().params_mut(),
            self.continuous.generator().params(),
            self.tau,
        );
        Ok(())
    }

    /// Step 1 followed by its optimizer step.
    pub fn step1_discrete_update<R: Rng + ?Sized>(&mut self, batch: &Batch, alpha: f64, rng: &mut R) -> Result<f64> {
        let (loss, grads) = step1_grads(self, &self.critic, batch, alpha, rng)?;
        self.apply_discrete(&grads);
        Ok(loss)
    }

    /// Step 2 followed by its optimizer step.
    pub fn step2_continuous_codebook_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        alpha: f64,
        rng: &mut R,
    ) -> Result<(f64, Vec<usize>)> {
        let (loss, grads, indices) = step2_grads(self, &self.critic, batch, alpha, false, rng)?;
        self.apply_continuous_and_codebook(&grads);
        Ok((loss, indices))
    }

    /// Critic update followed by its optimizer step.
    pub fn critic_update<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64> {
        let (loss, grads) = critic_update_grads(self, batch, rng)?;
        self.apply_critic(&grads);
        Ok(loss)
    }
}

/// One full training iteration on a fresh minibatch.
pub fn train_iteration<R: Rng>(
    agent: &mut Agent,
    buffer: &ReplayBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<IterationMetrics> {
    train_iteration_with_hook(agent, buffer, batch_size, rng, &mut |_, _| {})
}

/// [`train_iteration`], calling `hook` after each phase.
pub fn train_iteration_with_hook<R: Rng>(
    agent: &mut Agent,
    buffer: &ReplayBuffer,
    batch_size: usize,
    rng: &mut R,
    hook: &mut dyn FnMut(Phase, &Agent),
) -> Result<IterationMetrics> {
    let batch = buffer.sample(batch_size, rng)?;

    let critic_loss = agent.critic_update(&batch, rng)?;
    hook(Phase::Critic, agent);

    let mean_abs_q = agent
        .critic
        .mean_abs_q(batch.states.view(), batch.latents.view(), batch.actions.view())?;
    let alpha = agent.eta / mean_abs_q.max(ALPHA_FLOOR);

    let (discrete_loss, continuous_loss, indices) = if agent.ablation.concurrent_update {
        let (d_loss, d_grads) = step1_grads(agent, &agent.critic, &batch, alpha, rng)?;
        let (c_loss, c_grads, indices) = step2_grads(agent, &agent.critic, &batch, alpha, true, rng)?;
        agent.apply_discrete(&d_grads);
        hook(Phase::Discrete, agent);
        agent.apply_continuous_and_codebook(&c_grads);
        hook(Phase::ContinuousAndCodebook, agent);
        (d_loss, c_loss, indices)
    } else {
        let d_loss = agent.step1_discrete_update(&batch, alpha, rng)?;
        hook(Phase::Discrete, agent);
        let (c_loss, indices) = agent.step2_continuous_codebook_update(&batch, alpha, rng)?;
        hook(Phase::ContinuousAndCodebook, agent);
        (d_loss, c_loss, indices)
    };

    agent.update_targets()?;
    hook(Phase::Targets, agent);
    agent.iterations += 1;

    let mut counts = vec![0u64; agent.num_discrete];
    for k in indices {
        counts[k] += 1;
    }
    let selections = counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .collect();
    Ok(IterationMetrics {
        iteration: agent.iterations,
        critic_loss,
        discrete_loss,
        continuous_loss,
        alpha,
        mean_abs_q,
        selections,
    })
}

/// Column view of a state slice as a one-row matrix.
pub fn row(state: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, state.len()), state).expect("row vector")
}

/// Mean of the per-row values along axis 0, for diagnostics.
pub fn column_means(m: &Array2<f64>) -> Vec<f64> {
    m.mean_axis(Axis(0)).map(|v| v.to_vec()).unwrap_or_default()
}

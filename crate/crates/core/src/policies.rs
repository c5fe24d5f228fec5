//! The discrete agent's latent generator and the continuous agent's
//! codeword-conditioned action generator.
//!
//! Both wrap a [`Generator`]: a diffusion sampler in the full model, or a
//! tanh-squashed feedforward map under the deterministic ablation.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{self, ExogenousNoise, NoiseNet, NoiseSchedule, SampleTrace};
use crate::nn::{Activation, Mlp, MlpCache};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyNetworkConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Default for PolicyNetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            time_embed_dim: 16,
            activation: Activation::Mish,
        }
    }
}

impl PolicyNetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("policy hidden widths must be nonempty".into()));
        }
        Ok(())
    }
}

/// Maps a condition to an output in `[-1, 1]^out_dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Generator {
    Diffusion { net: NoiseNet, schedule: NoiseSchedule },
    Deterministic { mlp: Mlp },
}

/// Everything [`Generator::backward`] needs from a training-mode sample.
#[derive(Debug, Clone)]
pub enum GeneratorTrace {
    Diffusion(SampleTrace),
    Deterministic { cache: MlpCache, output: Array2<f64> },
}

impl Generator {
    pub fn diffusion<R: Rng + ?Sized>(
        out_dim: usize,
        cond_dim: usize,
        config: &PolicyNetworkConfig,
        schedule: NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let net = NoiseNet::new(out_dim, cond_dim, &config.hidden, config.time_embed_dim, config.activation, rng)?;
        Ok(Generator::Diffusion { net, schedule })
    }

    pub fn deterministic<R: Rng + ?Sized>(
        out_dim: usize,
        cond_dim: usize,
        config: &PolicyNetworkConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if cond_dim == 0 {
            return Err(Error::InvalidConfig("deterministic generator needs a condition".into()));
        }
        let mlp = Mlp::new(cond_dim, &config.hidden, out_dim, config.activation, rng)?;
        Ok(Generator::Deterministic { mlp })
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Generator::Deterministic { .. })
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Generator::Diffusion { net, .. } => diffusion::NoiseModel::sample_dim(net),
            Generator::Deterministic { mlp } => mlp.output_dim(),
        }
    }

    pub fn cond_dim(&self) -> usize {
        match self {
            Generator::Diffusion { net, .. } => diffusion::NoiseModel::cond_dim(net),
            Generator::Deterministic { mlp } => mlp.input_dim(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Generator::Diffusion { net, .. } => net.params(),
            Generator::Deterministic { mlp } => mlp.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Generator::Diffusion { net, .. } => net.params_mut(),
            Generator::Deterministic { mlp } => mlp.params_mut(),
        }
    }

    /// Zeroes the output layer, making a diffusion generator's predictor
    /// identically zero.
    pub fn zero_output_layer(&mut self) {
        match self {
            Generator::Diffusion { net, .. } => net.mlp_mut().zero_output_layer(),
            Generator::Deterministic { mlp } => mlp.zero_output_layer(),
        }
    }

    /// Inference-mode sample. Deterministic generators ignore `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, cond: ArrayView2<'_, f64>, rng: &mut R) -> Result<Array2<f64>> {
        match self {
            Generator::Diffusion { net, schedule } => diffusion::sample(net, cond, schedule, rng),
            Generator::Deterministic { mlp } => Ok(mlp.forward(cond)?.mapv(f64::tanh)),
        }
    }

    /// Training-mode sample with noise drawn from `rng`.
    pub fn sample_traced<R: Rng + ?Sized>(
        &self,
        cond: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, GeneratorTrace)> {
        match self {
            Generator::Diffusion { schedule, .. } => {
                let noise = ExogenousNoise::draw(rng, cond.nrows(), self.out_dim(), schedule.steps());
                self.sample_traced_with_noise(cond, &noise)
            }
            Generator::Deterministic { .. } => self.sample_traced_with_noise(cond, &ExogenousNoise::empty()),
        }
    }

    /// Training-mode sample with fixed exogenous noise (ignored when deterministic).
    pub fn sample_traced_with_noise(
        &self,
        cond: ArrayView2<'_, f64>,
        noise: &ExogenousNoise,
    ) -> Result<(Array2<f64>, GeneratorTrace)> {
        match self {
            Generator::Diffusion { net, schedule } => {
                let (out, trace) = diffusion::sample_traced(net, cond, schedule, noise)?;
                Ok((out, GeneratorTrace::Diffusion(trace)))
            }
            Generator::Deterministic { mlp } => {
                let (raw, cache) = mlp.forward_cached(cond)?;
                let output = raw.mapv(f64::tanh);
                Ok((output.clone(), GeneratorTrace::Deterministic { cache, output }))
            }
        }
    }

    /// Backpropagates d loss / d output; returns d loss / d condition.
    pub fn backward(&self, trace: &GeneratorTrace, grad_out: ArrayView2<'_, f64>, grad_params: &mut [f64]) -> Array2<f64> {
        match (self, trace) {
            (Generator::Diffusion { net, schedule }, GeneratorTrace::Diffusion(trace)) => {
                diffusion::sample_backward(net, schedule, trace, grad_out, grad_params)
            }
            (Generator::Deterministic { mlp }, GeneratorTrace::Deterministic { cache, output }) => {
                let mut g = grad_out.to_owned();
                g.zip_mut_with(output, |g, &y| *g *= 1.0 - y * y);
                mlp.backward(cache, g.view(), grad_params)
            }
            _ => panic!("generator trace does not match generator kind"),
        }
    }

    /// Behavior-cloning loss towards `x0`: the diffusion noise-prediction
    /// loss, or mean squared error for a deterministic generator.
    pub fn bc_loss<R: Rng + ?Sized>(&self, cond: ArrayView2<'_, f64>, x0: ArrayView2<'_, f64>, rng: &mut R) -> Result<f64> {
        match self {
            Generator::Diffusion { net, schedule } => diffusion::bc_loss(net, cond, x0, schedule, rng),
            Generator::Deterministic { .. } => {
                let mut scratch = vec![0.0; self.params().len()];
                self.bc_loss_grad(cond, x0, rng, &mut scratch)
            }
        }
    }

    pub fn bc_loss_grad<R: Rng + ?Sized>(
        &self,
        cond: ArrayView2<'_, f64>,
        x0: ArrayView2<'_, f64>,
        rng: &mut R,
        grad_params: &mut [f64],
    ) -> Result<f64> {
        match self {
            Generator::Diffusion { net, schedule } => diffusion::bc_loss_grad(net, cond, x0, schedule, rng, grad_params),
            Generator::Deterministic { mlp } => {
                if x0.nrows() == 0 {
                    return Err(Error::EmptyBatch);
                }
                if x0.ncols() != mlp.output_dim() || x0.nrows() != cond.nrows() {
                    return Err(Error::DimensionMismatch {
                        what: "regression target",
                        expected: mlp.output_dim(),
                        actual: x0.ncols(),
                    });
                }
                let (raw, cache) = mlp.forward_cached(cond)?;
                let out = raw.mapv(f64::tanh);
                let diff = &out - &x0;
                let scale = 2.0 / diff.len() as f64;
                let loss = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
                let mut g = diff.mapv(|d| scale * d);
                g.zip_mut_with(&out, |g, &y| *g *= 1.0 - y * y);
                mlp.backward(&cache, g.view(), grad_params);
                Ok(loss)
            }
        }
    }
}

impl ExogenousNoise {
    fn empty() -> Self {
        Self {
            initial: Array2::zeros((0, 0)),
            per_step: Vec::new(),
        }
    }
}

fn check_cols(what: &'static str, expected: usize, m: &ArrayView2<'_, f64>) -> Result<()> {
    if m.ncols() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual: m.ncols(),
        });
    }
    Ok(())
}

/// The discrete agent: generates a latent `e` from the state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteLatentPolicy {
    generator: Generator,
    obs_dim: usize,
}

impl DiscreteLatentPolicy {
    pub fn new(generator: Generator, obs_dim: usize) -> Result<Self> {
        if generator.cond_dim() != obs_dim {
            return Err(Error::DimensionMismatch {
                what: "discrete policy condition",
                expected: obs_dim,
                actual: generator.cond_dim(),
            });
        }
        Ok(Self { generator, obs_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.out_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, states: ArrayView2<'_, f64>, rng: &mut R) -> Result<Array2<f64>> {
        check_cols("state", self.obs_dim, &states)?;
        self.generator.sample(states, rng)
    }

    pub fn sample_latent_traced<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, GeneratorTrace)> {
        check_cols("state", self.obs_dim, &states)?;
        self.generator.sample_traced(states, rng)
    }
}

/// The continuous agent: generates parameters from `[state | codeword]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuousPolicy {
    generator: Generator,
    obs_dim: usize,
    latent_dim: usize,
}

impl ContinuousPolicy {
    pub fn new(generator: Generator, obs_dim: usize, latent_dim: usize) -> Result<Self> {
        if generator.cond_dim() != obs_dim + latent_dim {
            return Err(Error::DimensionMismatch {
                what: "continuous policy condition",
                expected: obs_dim + latent_dim,
                actual: generator.cond_dim(),
            });
        }
        Ok(Self {
            generator,
            obs_dim,
            latent_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.generator.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator {
        &mut self.generator
    }

    pub fn condition(&self, states: ArrayView2<'_, f64>, codewords: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols("state", self.obs_dim, &states)?;
        check_cols("codeword", self.latent_dim, &codewords)?;
        if states.nrows() != codewords.nrows() {
            return Err(Error::DimensionMismatch {
                what: "codeword batch",
                expected: states.nrows(),
                actual: codewords.nrows(),
            });
        }
        Ok(concatenate(Axis(1), &[states, codewords]).expect("row counts checked"))
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        codewords: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let cond = self.condition(states, codewords)?;
        self.generator.sample(cond.view(), rng)
    }

    pub fn sample_action_traced<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        codewords: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, GeneratorTrace)> {
        let cond = self.condition(states, codewords)?;
        self.generator.sample_traced(cond.view(), rng)
    }

    pub fn sample_action_traced_with_noise(
        &self,
        states: ArrayView2<'_, f64>,
        codewords: ArrayView2<'_, f64>,
        noise: &ExogenousNoise,
    ) -> Result<(Array2<f64>, GeneratorTrace)> {
        let cond = self.condition(states, codewords)?;
        self.generator.sample_traced_with_noise(cond.view(), noise)
    }

    /// Backpropagates d loss / d action; returns d loss / d codeword.
    pub fn backward(&self, trace: &GeneratorTrace, grad_out: ArrayView2<'_, f64>, grad_params: &mut [f64]) -> Array2<f64> {
        let grad_cond = self.generator.backward(trace, grad_out, grad_params);
        grad_cond.slice(s![.., self.obs_dim..]).to_owned()
    }
}

//! Denoising-diffusion primitives shared by both policies.
//!
//! Step indices are 1-based throughout: step `i` uses `beta_i`, `alpha_i` and
//! `alpha_bar_i`, and the reverse chain runs `i = N, N-1, ..., 1`.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{time_embedding, Activation, Mlp, MlpCache};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    #[default]
    VariancePreserving,
}

/// Per-step noise variances and their derived products.
///
/// Serializes as the raw `betas` vector; everything else is recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    betas: Vec<f64>,
}

impl TryFrom<RawSchedule> for NoiseSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        NoiseSchedule::from_betas(raw.betas)
    }
}

impl From<NoiseSchedule> for RawSchedule {
    fn from(schedule: NoiseSchedule) -> Self {
        RawSchedule {
            betas: schedule.betas,
        }
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidConfig("noise schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidConfig(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion steps `N`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.steps() {
            return Err(Error::StepOutOfRange {
                step: i,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i - 1]
    }

    /// Coefficients `(1/sqrt(alpha_i), (1-alpha_i)/sqrt(1-alpha_bar_i), sqrt(beta_i))`
    /// of the reverse update.
    fn reverse_coefficients(&self, i: usize) -> (f64, f64, f64) {
        let alpha = self.alpha(i);
        let residual = 1.0 - self.alpha_bar(i);
        // beta underflowing to zero leaves a 0/0 noise coefficient
        let c2 = if residual > 0.0 { (1.0 - alpha) / residual.sqrt() } else { 0.0 };
        (1.0 / alpha.sqrt(), c2, self.beta(i).sqrt())
    }
}

/// Builds an `n`-step schedule.
///
/// `Linear` interpolates `beta_i` between the endpoints, which must lie in
/// `(0, 1)`. `VariancePreserving` treats the endpoints as the continuous-time
/// rates `beta_min`/`beta_max` and discretizes them, so they only need to be
/// positive.
pub fn make_schedule(
    n: usize,
    beta_start: f64,
    beta_end: f64,
    kind: ScheduleKind,
) -> Result<NoiseSchedule> {
    if n < 1 {
        return Err(Error::InvalidConfig("schedule needs n >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end) {
        return Err(Error::InvalidConfig(format!(
            "schedule endpoints must satisfy 0 < start <= end, got {beta_start}, {beta_end}"
        )));
    }
    let betas = match kind {
        ScheduleKind::Linear => {
            if beta_end >= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "linear schedule end {beta_end} must be < 1"
                )));
            }
            if n == 1 {
                vec![beta_start]
            } else {
                (0..n)
                    .map(|j| beta_start + (beta_end - beta_start) * j as f64 / (n - 1) as f64)
                    .collect()
            }
        }
        ScheduleKind::VariancePreserving => {
            let nf = n as f64;
            (1..=n)
                .map(|i| {
                    let exponent = beta_start / nf
                        + (beta_end - beta_start) * (2.0 * i as f64 - 1.0) / (2.0 * nf * nf);
                    1.0 - (-exponent).exp()
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(betas)
}

fn check_same_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// `sqrt(alpha_bar_i) * x0 + sqrt(1 - alpha_bar_i) * eps`.
pub fn forward_noise(x0: &[f64], i: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(i)?;
    check_same_len("forward_noise eps", x0.len(), eps.len())?;
    let ab = schedule.alpha_bar(i);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One reverse (denoising) step from `x_i` to `x_{i-1}`.
pub fn reverse_step(
    x_i: &[f64],
    eps_pred: &[f64],
    i: usize,
    z: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    schedule.check_step(i)?;
    check_same_len("reverse_step eps_pred", x_i.len(), eps_pred.len())?;
    check_same_len("reverse_step z", x_i.len(), z.len())?;
    let (c1, c2, sigma) = schedule.reverse_coefficients(i);
    Ok(x_i
        .iter()
        .zip(eps_pred)
        .zip(z)
        .map(|((x, e), z)| c1 * (x - c2 * e) + sigma * z)
        .collect())
}

/// A conditional noise predictor `eps(x_i, condition, i)`, batched by rows.
pub trait NoiseModel {
    /// Dimension of the denoised sample (and of the predicted noise).
    fn sample_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    /// `steps[r]` is the diffusion step of row `r`.
    fn predict(&self, x: ArrayView2<'_, f64>, cond: ArrayView2<'_, f64>, steps: &[usize]) -> Result<Array2<f64>>;
}

/// MLP noise predictor on `[x_i | condition | sinusoidal(i)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseNet {
    mlp: Mlp,
    sample_dim: usize,
    cond_dim: usize,
    time_dim: usize,
}

impl NoiseNet {
    pub fn new<R: Rng + ?Sized>(
        sample_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        time_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::new(sample_dim + cond_dim + time_dim, hidden, sample_dim, activation, rng)?;
        Ok(Self {
            mlp,
            sample_dim,
            cond_dim,
            time_dim,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    fn assemble(&self, x: ArrayView2<'_, f64>, cond: ArrayView2<'_, f64>, steps: &[usize]) -> Result<Array2<f64>> {
        check_same_len("noise net sample", self.sample_dim, x.ncols())?;
        check_same_len("noise net condition", self.cond_dim, cond.ncols())?;
        check_same_len("noise net batch", x.nrows(), cond.nrows())?;
        check_same_len("noise net steps", x.nrows(), steps.len())?;
        let width = self.sample_dim + self.cond_dim + self.time_dim;
        let mut input = Array2::zeros((x.nrows(), width));
        input.slice_mut(s![.., ..self.sample_dim]).assign(&x);
        input
            .slice_mut(s![.., self.sample_dim..self.sample_dim + self.cond_dim])
            .assign(&cond);
        if self.time_dim > 0 {
            let mut emb = vec![0.0; self.time_dim];
            let mut cached_step = usize::MAX;
            for (r, &step) in steps.iter().enumerate() {
                if step != cached_step {
                    time_embedding(step, self.time_dim, &mut emb);
                    cached_step = step;
                }
                let mut row = input.row_mut(r);
                for (dst, &v) in row.iter_mut().skip(self.sample_dim + self.cond_dim).zip(&emb) {
                    *dst = v;
                }
            }
        }
        Ok(input)
    }

    pub fn predict_cached(
        &self,
        x: ArrayView2<'_, f64>,
        cond: ArrayView2<'_, f64>,
        steps: &[usize],
    ) -> Result<(Array2<f64>, MlpCache)> {
        let input = self.assemble(x, cond, steps)?;
        self.mlp.forward_cached(input.view())
    }

    /// Returns `(d/dx, d/dcondition)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: ArrayView2<'_, f64>,
        grad_params: &mut [f64],
    ) -> (Array2<f64>, Array2<f64>) {
        let grad_in = self.mlp.backward(cache, grad_out, grad_params);
        let gx = grad_in.slice(s![.., ..self.sample_dim]).to_owned();
        let gc = grad_in
            .slice(s![.., self.sample_dim..self.sample_dim + self.cond_dim])
            .to_owned();
        (gx, gc)
    }
}

impl NoiseModel for NoiseNet {
    fn sample_dim(&self) -> usize {
        self.sample_dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn predict(&self, x: ArrayView2<'_, f64>, cond: ArrayView2<'_, f64>, steps: &[usize]) -> Result<Array2<f64>> {
        let input = self.assemble(x, cond, steps)?;
        self.mlp.forward(input.view())
    }
}

/// Every random input of one sampling call: the initial draw `x_N` and the
/// per-step noises. `per_step[i - 1]` is `z_i`; `z_1` is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousNoise {
    pub initial: Array2<f64>,
    pub per_step: Vec<Array2<f64>>,
}

impl ExogenousNoise {
    /// Draws `x_N`, then `z_N, ..., z_2`, row-major.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, batch: usize, dim: usize, steps: usize) -> Self {
        let initial = standard_normal((batch, dim), rng);
        let mut per_step = vec![Array2::zeros((batch, dim)); steps];
        for i in (2..=steps).rev() {
            per_step[i - 1] = standard_normal((batch, dim), rng);
        }
        Self { initial, per_step }
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn check_noise(noise: &ExogenousNoise, batch: usize, dim: usize, schedule: &NoiseSchedule) -> Result<()> {
    check_same_len("noise batch", batch, noise.initial.nrows())?;
    check_same_len("noise dim", dim, noise.initial.ncols())?;
    check_same_len("noise steps", schedule.steps(), noise.per_step.len())?;
    Ok(())
}

fn apply_reverse(x: &mut Array2<f64>, eps: &Array2<f64>, z: &Array2<f64>, i: usize, schedule: &NoiseSchedule) {
    let (c1, c2, sigma) = schedule.reverse_coefficients(i);
    ndarray::Zip::from(x).and(eps).and(z).for_each(|x, &e, &z| {
        *x = c1 * (*x - c2 * e) + if i > 1 { sigma * z } else { 0.0 };
    });
}

/// Runs the full reverse chain with the given noises. One output row per
/// condition row, clamped to `[-1, 1]`.
pub fn sample_with_noise<M: NoiseModel + ?Sized>(
    net: &M,
    cond: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
    noise: &ExogenousNoise,
) -> Result<Array2<f64>> {
    check_noise(noise, cond.nrows(), net.sample_dim(), schedule)?;
    let mut x = noise.initial.clone();
    let mut steps = vec![0; cond.nrows()];
    for i in (1..=schedule.steps()).rev() {
        steps.fill(i);
        let eps = net.predict(x.view(), cond, &steps)?;
        apply_reverse(&mut x, &eps, &noise.per_step[i - 1], i, schedule);
    }
    x.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(x)
}

/// Draws fresh noise from `rng` and samples (inference mode).
pub fn sample<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    net: &M,
    cond: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let noise = ExogenousNoise::draw(rng, cond.nrows(), net.sample_dim(), schedule.steps());
    sample_with_noise(net, cond, schedule, &noise)
}

/// Intermediate state of a differentiable sampling call.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    // caches[j] belongs to step N - j.
    caches: Vec<MlpCache>,
    unclamped: Array2<f64>,
}

/// Training-mode sampling: same output as [`sample_with_noise`], plus the
/// trace needed by [`sample_backward`]. The noises are fixed inputs.
pub fn sample_traced(
    net: &NoiseNet,
    cond: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
    noise: &ExogenousNoise,
) -> Result<(Array2<f64>, SampleTrace)> {
    check_noise(noise, cond.nrows(), net.sample_dim(), schedule)?;
    let mut x = noise.initial.clone();
    let mut steps = vec![0; cond.nrows()];
    let mut caches = Vec::with_capacity(schedule.steps());
    for i in (1..=schedule.steps()).rev() {
        steps.fill(i);
        let (eps, cache) = net.predict_cached(x.view(), cond, &steps)?;
        caches.push(cache);
        apply_reverse(&mut x, &eps, &noise.per_step[i - 1], i, schedule);
    }
    let out = x.mapv(|v| v.clamp(-1.0, 1.0));
    Ok((out, SampleTrace { caches, unclamped: x }))
}

/// Backpropagates `grad_out` (d loss / d sample) through the reverse chain.
/// Accumulates parameter gradients into `grad_params` and returns
/// d loss / d condition.
pub fn sample_backward(
    net: &NoiseNet,
    schedule: &NoiseSchedule,
    trace: &SampleTrace,
    grad_out: ArrayView2<'_, f64>,
    grad_params: &mut [f64],
) -> Array2<f64> {
    let mut g = grad_out.to_owned();
    g.zip_mut_with(&trace.unclamped, |g, &raw| {
        if !(-1.0..=1.0).contains(&raw) {
            *g = 0.0;
        }
    });
    let mut grad_cond = Array2::zeros((g.nrows(), net.cond_dim));
    let n = schedule.steps();
    for (j, cache) in trace.caches.iter().enumerate().rev() {
        let i = n - j;
        let (c1, c2, _) = schedule.reverse_coefficients(i);
        // x_{i-1} = c1 * (x_i - c2 * eps(x_i, c, i)) + sigma * z
        let upstream = g.mapv(|v| -c1 * c2 * v);
        let (gx, gc) = net.backward(cache, upstream.view(), grad_params);
        grad_cond += &gc;
        g.mapv_inplace(|v| c1 * v);
        g += &gx;
    }
    grad_cond
}

fn check_bc_batch(sample_dim: usize, cond_dim: usize, cond: &ArrayView2<'_, f64>, x0: &ArrayView2<'_, f64>) -> Result<()> {
    if x0.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    check_same_len("bc_loss batch", x0.nrows(), cond.nrows())?;
    check_same_len("bc_loss sample", sample_dim, x0.ncols())?;
    check_same_len("bc_loss condition", cond_dim, cond.ncols())?;
    Ok(())
}

/// Draws one step index (uniform on `1..=N`) per record, then the noise matrix.
pub fn draw_bc_noise<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    dim: usize,
    schedule: &NoiseSchedule,
) -> (Vec<usize>, Array2<f64>) {
    let steps = (0..batch).map(|_| rng.random_range(1..=schedule.steps())).collect();
    (steps, standard_normal((batch, dim), rng))
}

fn noised_inputs(x0: ArrayView2<'_, f64>, steps: &[usize], eps: &Array2<f64>, schedule: &NoiseSchedule) -> Array2<f64> {
    let mut xi = x0.to_owned();
    for ((mut row, eps_row), &i) in xi.axis_iter_mut(Axis(0)).zip(eps.axis_iter(Axis(0))).zip(steps) {
        let ab = schedule.alpha_bar(i);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        row.zip_mut_with(&eps_row, |x, &e| *x = a * *x + b * e);
    }
    xi
}

/// Noise-prediction loss with explicit step indices and noises: mean over
/// records and components of `(eps - eps_hat)^2`.
pub fn bc_loss_fixed<M: NoiseModel + ?Sized>(
    net: &M,
    cond: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
    steps: &[usize],
    eps: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_bc_batch(net.sample_dim(), net.cond_dim(), &cond, &x0)?;
    check_same_len("bc_loss steps", x0.nrows(), steps.len())?;
    for &i in steps {
        schedule.check_step(i)?;
    }
    let eps = eps.to_owned();
    let xi = noised_inputs(x0, steps, &eps, schedule);
    let pred = net.predict(xi.view(), cond, steps)?;
    Ok((&pred - &eps).mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Behavior-cloning diffusion loss with uniformly drawn steps and noises.
pub fn bc_loss<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    net: &M,
    cond: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    check_bc_batch(net.sample_dim(), net.cond_dim(), &cond, &x0)?;
    let (steps, eps) = draw_bc_noise(rng, x0.nrows(), net.sample_dim(), schedule);
    bc_loss_fixed(net, cond, x0, schedule, &steps, eps.view())
}

/// [`bc_loss`] plus its parameter gradient (accumulated into `grad_params`).
/// Consumes the same random draws as [`bc_loss`].
pub fn bc_loss_grad<R: Rng + ?Sized>(
    net: &NoiseNet,
    cond: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    grad_params: &mut [f64],
) -> Result<f64> {
    check_bc_batch(net.sample_dim, net.cond_dim, &cond, &x0)?;
    let (steps, eps) = draw_bc_noise(rng, x0.nrows(), net.sample_dim, schedule);
    let xi = noised_inputs(x0, &steps, &eps, schedule);
    let (pred, cache) = net.predict_cached(xi.view(), cond, &steps)?;
    let diff = &pred - &eps;
    let scale = 2.0 / diff.len() as f64;
    let loss = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
    let grad = diff.mapv(|d| scale * d);
    net.backward(&cache, grad.view(), grad_params);
    Ok(loss)
}

//! Twin Q-networks over `(state, latent, continuous action)` with Polyak
//! target copies.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{polyak, Activation, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Mish,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwinCritic {
    online: [Mlp; 2],
    target: [Mlp; 2],
    obs_dim: usize,
    latent_dim: usize,
    action_dim: usize,
}

/// Supplies `(e_{t+1}, a^c_{t+1})` for next states when bootstrapping.
pub trait NextActionSource {
    fn next_actions(
        &self,
        next_states: ArrayView2<'_, f64>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// Per-row minimum of the two online critics with its input gradient.
#[derive(Debug, Clone)]
pub struct MinQ {
    pub values: Array1<f64>,
    /// d(sum of `upstream * min Q`) / d input, split by input block.
    pub grad_latent: Array2<f64>,
    pub grad_action: Array2<f64>,
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        latent_dim: usize,
        action_dim: usize,
        config: &CriticConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let input = obs_dim + latent_dim + action_dim;
        let q1 = Mlp::new(input, &config.hidden, 1, config.activation, rng)?;
        let q2 = Mlp::new(input, &config.hidden, 1, config.activation, rng)?;
        Ok(Self {
            target: [q1.clone(), q2.clone()],
            online: [q1, q2],
            obs_dim,
            latent_dim,
            action_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.latent_dim + self.action_dim
    }

    pub fn online(&self, j: usize) -> &Mlp {
        &self.online[j]
    }

    pub fn online_mut(&mut self, j: usize) -> &mut Mlp {
        &mut self.online[j]
    }

    pub fn target(&self, j: usize) -> &Mlp {
        &self.target[j]
    }

    pub fn target_mut(&mut self, j: usize) -> &mut Mlp {
        &mut self.target[j]
    }

    /// Zeroes both online output layers and re-syncs the targets.
    pub fn zero_output_layers(&mut self) {
        for j in 0..2 {
            self.online[j].zero_output_layer();
            self.target[j] = self.online[j].clone();
        }
    }

    fn inputs(&self, s: ArrayView2<'_, f64>, e: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        for (what, expected, m) in [
            ("critic state", self.obs_dim, &s),
            ("critic latent", self.latent_dim, &e),
            ("critic action", self.action_dim, &a),
        ] {
            if m.ncols() != expected {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    actual: m.ncols(),
                });
            }
        }
        if e.nrows() != s.nrows() || a.nrows() != s.nrows() {
            return Err(Error::DimensionMismatch {
                what: "critic batch",
                expected: s.nrows(),
                actual: e.nrows().min(a.nrows()),
            });
        }
        Ok(concatenate(Axis(1), &[s, e, a]).expect("shapes checked"))
    }

    /// Both online estimates for every row.
    pub fn q_values(
        &self,
        s: ArrayView2<'_, f64>,
        e: ArrayView2<'_, f64>,
        a: ArrayView2<'_, f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let x = self.inputs(s, e, a)?;
        let q1 = self.online[0].forward(x.view())?.column(0).to_owned();
        let q2 = self.online[1].forward(x.view())?.column(0).to_owned();
        Ok((q1, q2))
    }

    /// `min_j Q'_j` from the target networks.
    pub fn target_min(&self, s: ArrayView2<'_, f64>, e: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let x = self.inputs(s, e, a)?;
        let q1 = self.target[0].forward(x.view())?;
        let q2 = self.target[1].forward(x.view())?;
        Ok(Array1::from_shape_fn(x.nrows(), |r| q1[[r, 0]].min(q2[[r, 0]])))
    }

    /// `y = r + gamma * (1 - done) * min_j Q'_j(s', e', a')` with `(e', a')`
    /// drawn from `next`. Records with `done` never query `next` or the
    /// targets; if every record is terminal, `next` is not called at all.
    pub fn td_target(
        &self,
        rewards: ArrayView1<'_, f64>,
        next_states: ArrayView2<'_, f64>,
        dones: &[bool],
        gamma: f64,
        next: &dyn NextActionSource,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Array1<f64>> {
        let n = rewards.len();
        if next_states.nrows() != n || dones.len() != n {
            return Err(Error::DimensionMismatch {
                what: "td_target batch",
                expected: n,
                actual: next_states.nrows().min(dones.len()),
            });
        }
        let mut y = rewards.to_owned();
        let live: Vec<usize> = (0..n).filter(|&r| !dones[r]).collect();
        if live.is_empty() || gamma == 0.0 {
            return Ok(y);
        }
        let s_live = next_states.select(Axis(0), &live);
        let (e, a) = next.next_actions(s_live.view(), rng)?;
        let q = self.target_min(s_live.view(), e.view(), a.view())?;
        for (j, &r) in live.iter().enumerate() {
            y[r] += gamma * q[j];
        }
        Ok(y)
    }

    /// `sum_j mean((Q_j - y)^2)`.
    pub fn critic_loss(
        &self,
        s: ArrayView2<'_, f64>,
        e: ArrayView2<'_, f64>,
        a: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
    ) -> Result<f64> {
        if s.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let (q1, q2) = self.q_values(s, e, a)?;
        Ok(mse(&q1, &y) + mse(&q2, &y))
    }

    /// [`TwinCritic::critic_loss`] with gradients for each online critic.
    pub fn critic_loss_grad(
        &self,
        s: ArrayView2<'_, f64>,
        e: ArrayView2<'_, f64>,
        a: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        grads: [&mut [f64]; 2],
    ) -> Result<f64> {
        if s.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if y.len() != s.nrows() {
            return Err(Error::DimensionMismatch {
                what: "critic targets",
                expected: s.nrows(),
                actual: y.len(),
            });
        }
        let x = self.inputs(s, e, a)?;
        let n = x.nrows() as f64;
        let mut loss = 0.0;
        for (net, grad) in self.online.iter().zip(grads) {
            let (q, cache) = net.forward_cached(x.view())?;
            let residual = Array2::from_shape_fn(q.raw_dim(), |(r, _)| q[[r, 0]] - y[r]);
            loss += residual.mapv(|d| d * d).sum() / n;
            let upstream = residual.mapv(|d| 2.0 * d / n);
            net.backward(&cache, upstream.view(), grad);
        }
        Ok(loss)
    }

    /// Row-wise `min(Q_1, Q_2)` and its gradient with respect to the latent
    /// and action inputs, weighted by `upstream`. Critic parameters are not
    /// differentiated.
    pub fn min_q_input_grad(
        &self,
        s: ArrayView2<'_, f64>,
        e: ArrayView2<'_, f64>,
        a: ArrayView2<'_, f64>,
        upstream: f64,
    ) -> Result<MinQ> {
        let x = self.inputs(s, e, a)?;
        let (q1, c1) = self.online[0].forward_cached(x.view())?;
        let (q2, c2) = self.online[1].forward_cached(x.view())?;
        let rows = x.nrows();
        let values = Array1::from_shape_fn(rows, |r| q1[[r, 0]].min(q2[[r, 0]]));
        let pick_first: Vec<bool> = (0..rows).map(|r| q1[[r, 0]] <= q2[[r, 0]]).collect();
        let g1 = Array2::from_shape_fn((rows, 1), |(r, _)| if pick_first[r] { upstream } else { 0.0 });
        let g2 = Array2::from_shape_fn((rows, 1), |(r, _)| if pick_first[r] { 0.0 } else { upstream });
        let mut scratch = vec![0.0; self.online[0].num_params().max(self.online[1].num_params())];
        let n1 = self.online[0].num_params();
        let mut grad_in = self.online[0].backward(&c1, g1.view(), &mut scratch[..n1]);
        let n2 = self.online[1].num_params();
        grad_in += &self.online[1].backward(&c2, g2.view(), &mut scratch[..n2]);
        let lo = self.obs_dim;
        let mid = lo + self.latent_dim;
        Ok(MinQ {
            values,
            grad_latent: grad_in.slice(s![.., lo..mid]).to_owned(),
            grad_action: grad_in.slice(s![.., mid..]).to_owned(),
        })
    }

    /// Mean of `|Q_j|` over the batch and both online critics.
    pub fn mean_abs_q(&self, s: ArrayView2<'_, f64>, e: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<f64> {
        if s.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let (q1, q2) = self.q_values(s, e, a)?;
        Ok((q1.mapv(f64::abs).sum() + q2.mapv(f64::abs).sum()) / (2 * s.nrows()) as f64)
    }

    /// `phi' <- tau * phi + (1 - tau) * phi'` for both critics.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("polyak tau {tau} outside (0, 1]")));
        }
        for j in 0..2 {
            polyak(self.target[j].params_mut(), self.online[j].params(), tau);
        }
        Ok(())
    }
}

fn mse(q: &Array1<f64>, y: &ArrayView1<'_, f64>) -> f64 {
    q.iter().zip(y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / q.len() as f64
}

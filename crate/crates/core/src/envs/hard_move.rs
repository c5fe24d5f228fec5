//! Hard Move: a point agent driven by `n` fixed actuators.
//!
//! Actuator `j` pushes along `(cos 2πj/n, sin 2πj/n)` (counterclockwise from
//! the x-axis). A discrete action is an on/off mask over the actuators
//! (`K = 2^n`, bit `j` of `k` switches actuator `j`), and the scalar
//! parameter `c ∈ [-1, 1]` scales the resultant:
//!
//! `position += c * move_scale * base_direction(mask)`, clipped to `[-1, 1]²`.
//!
//! Reward per step is `-distance / (2√2)`, plus 10 on success (distance
//! below 0.1). The single-step variant starts at the origin with the target
//! at `(0, 0.3)` and a horizon of one step.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{distance, validated_params, Env, EnvSpec, HybridAction, StepResult};
use crate::{Error, Result};

const SUCCESS_RADIUS: f64 = 0.1;
const SUCCESS_BONUS: f64 = 10.0;
const ARENA_DIAGONAL: f64 = 2.0 * SQRT_2;
const MIN_START_DISTANCE: f64 = 0.5;

/// Mean of the unit vectors of the actuators selected in `mask`
/// (bit `j` = actuator `j` of `n`); zero for the empty mask.
pub fn base_direction(mask: usize, n: usize) -> [f64; 2] {
    let mut sum = [0.0, 0.0];
    let mut count = 0;
    for j in 0..n {
        if mask >> j & 1 == 1 {
            let angle = 2.0 * PI * j as f64 / n as f64;
            sum[0] += angle.cos();
            sum[1] += angle.sin();
            count += 1;
        }
    }
    if count == 0 {
        return [0.0, 0.0];
    }
    [sum[0] / count as f64, sum[1] / count as f64]
}

#[derive(Debug, Clone)]
pub struct HardMove {
    spec: EnvSpec,
    n: usize,
    single_step: bool,
    move_scale: f64,
    position: [f64; 2],
    target: [f64; 2],
    t: usize,
    done: bool,
}

impl HardMove {
    pub fn new(n: usize) -> Self {
        Self::build(n, false)
    }

    pub fn single_step(n: usize) -> Self {
        Self::build(n, true)
    }

    fn build(n: usize, single_step: bool) -> Self {
        let k = 1usize << n;
        let id = if single_step {
            format!("hard_move_n{n}_single_step")
        } else {
            format!("hard_move_n{n}")
        };
        let spec = EnvSpec {
            id,
            obs_dim: 4,
            num_discrete: k,
            action_dim: 1,
            horizon: if single_step { 1 } else { 25 },
            param_slices: vec![0..1; k],
            success: format!("agent within {SUCCESS_RADIUS} of the target"),
            reward: format!("-distance/(2*sqrt 2) per step, +{SUCCESS_BONUS} on success"),
        };
        Self {
            spec,
            n,
            single_step,
            // a full-magnitude aimed step lands inside the target; the n = 6 optimum is interior
            move_scale: if single_step { 0.38 } else { 0.2 },
            position: [0.0, 0.0],
            target: [0.0, 0.3],
            t: 0,
            done: true,
        }
    }

    pub fn actuators(&self) -> usize {
        self.n
    }

    pub fn move_scale(&self) -> f64 {
        self.move_scale
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.target[0], self.target[1]]
    }
}

impl Env for HardMove {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.t = 0;
        self.done = false;
        if self.single_step {
            self.position = [0.0, 0.0];
            self.target = [0.0, 0.3];
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                self.position = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                self.target = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                if distance(self.position, self.target) >= MIN_START_DISTANCE {
                    break;
                }
            }
        }
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let params = validated_params(&self.spec, action)?;
        let c = params[0];
        let dir = base_direction(action.k, self.n);
        for (x, d) in self.position.iter_mut().zip(dir) {
            *x = (*x + c * self.move_scale * d).clamp(-1.0, 1.0);
        }
        self.t += 1;
        let dist = distance(self.position, self.target);
        let success = dist < SUCCESS_RADIUS;
        let mut reward = -dist / ARENA_DIAGONAL;
        if success {
            reward += SUCCESS_BONUS;
        }
        self.done = success || self.t >= self.spec.horizon;
        let mut info = BTreeMap::new();
        info.insert("distance".to_string(), dist);
        info.insert("t".to_string(), self.t as f64);
        Ok(StepResult {
            state: self.observe(),
            reward,
            done: self.done,
            success,
            info,
        })
    }
}

//! Catch Point: move to a target point and catch it.
//!
//! State is `(agent x, agent y, target x, target y, attempts left / 3)`.
//! `MOVE` (k = 0) translates by `0.2 * (p0, p1)`; `CATCH` (k = 1) ignores its
//! parameters, succeeds within radius 0.15 and otherwise burns one of three
//! attempts. Reward: -0.05 per step, +10 on success, -5 when the attempts run
//! out. Horizon 20.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{distance, validated_params, Env, EnvSpec, HybridAction, StepResult};
use crate::{Error, Result};

const MOVE_SCALE: f64 = 0.2;
const CAPTURE_RADIUS: f64 = 0.15;
const ATTEMPTS: u32 = 3;

pub const MOVE: usize = 0;
pub const CATCH: usize = 1;

#[derive(Debug, Clone)]
pub struct CatchPoint {
    spec: EnvSpec,
    position: [f64; 2],
    target: [f64; 2],
    attempts: u32,
    t: usize,
    done: bool,
}

impl Default for CatchPoint {
    fn default() -> Self {
        Self::new()
    }
}

impl CatchPoint {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "catch_point".into(),
                obs_dim: 5,
                num_discrete: 2,
                action_dim: 2,
                horizon: 20,
                param_slices: vec![0..2, 2..2],
                success: format!("CATCH within {CAPTURE_RADIUS} of the target"),
                reward: "-0.05 per step, +10 on success, -5 when attempts are exhausted".into(),
            },
            position: [0.0; 2],
            target: [0.0; 2],
            attempts: ATTEMPTS,
            t: 0,
            done: true,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.target[0],
            self.target[1],
            self.attempts as f64 / ATTEMPTS as f64,
        ]
    }
}

impl Env for CatchPoint {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            self.position = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            self.target = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            if distance(self.position, self.target) >= 0.5 {
                break;
            }
        }
        self.attempts = ATTEMPTS;
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let params = validated_params(&self.spec, action)?;
        self.t += 1;
        let mut reward = -0.05;
        let mut success = false;
        let mut failed = false;
        if action.k == MOVE {
            for (x, p) in self.position.iter_mut().zip(&params) {
                *x = (*x + MOVE_SCALE * p).clamp(-1.0, 1.0);
            }
        } else if distance(self.position, self.target) < CAPTURE_RADIUS {
            success = true;
            reward += 10.0;
        } else {
            self.attempts -= 1;
            if self.attempts == 0 {
                failed = true;
                reward -= 5.0;
            }
        }
        self.done = success || failed || self.t >= self.spec.horizon;
        let mut info = BTreeMap::new();
        info.insert("distance".to_string(), distance(self.position, self.target));
        info.insert("attempts".to_string(), self.attempts as f64);
        Ok(StepResult {
            state: self.observe(),
            reward,
            done: self.done,
            success,
            info,
        })
    }
}

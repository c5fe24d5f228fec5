//! Kinematic ports of the robot-soccer Goal and Hard Goal tasks.
//!
//! The pitch is `[-1, 1]²` with the goal mouth on `x = 1`, `y ∈ [-0.4, 0.4]`.
//! The player dribbles the ball; a keeper on `x = 0.9` tracks the ball's `y`
//! at most 0.15 per step. State is `(ball x, ball y, keeper y)`.
//!
//! Goal has three actions: `KICK_TO(x, y)` dribbles up to 0.3 towards a point,
//! and `SHOOT_LOW(y)` / `SHOOT_HIGH(y)` shoot at the lower or upper half of
//! the mouth. Hard Goal replaces the two shots with ten sector shots, each
//! with one parameter placing the shot inside its sector (`K = 11`).
//!
//! A shot scores when its distance to the keeper exceeds the keeper's reach,
//! `0.1 + 0.3 * distance to the goal line`; shots from beyond 0.8 fall short.
//! Every shot ends the episode. Reward: +10 for a goal, -0.01 per step.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{validated_params, Env, EnvSpec, HybridAction, StepResult};
use crate::{Error, Result};

const MOUTH: f64 = 0.4;
const KICK_RANGE: f64 = 0.3;
const KEEPER_SPEED: f64 = 0.15;
const MAX_SHOT: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct Goal {
    spec: EnvSpec,
    sectors: usize,
    ball: [f64; 2],
    keeper: f64,
    t: usize,
    done: bool,
}

impl Goal {
    pub fn new() -> Self {
        Self::build("goal", 0)
    }

    pub fn hard() -> Self {
        Self::build("hard_goal", 10)
    }

    fn build(id: &str, sectors: usize) -> Self {
        let (num_discrete, slices) = if sectors == 0 {
            (3, vec![0..2, 2..3, 3..4])
        } else {
            let slices = std::iter::once(0..2).chain((0..sectors).map(|s| 2 + s..3 + s)).collect();
            (sectors + 1, slices)
        };
        let action_dim = slices.last().map(|r| r.end).unwrap_or(0);
        Self {
            spec: EnvSpec {
                id: id.into(),
                obs_dim: 3,
                num_discrete,
                action_dim,
                horizon: 15,
                param_slices: slices,
                success: "ball crosses the goal line past the keeper".into(),
                reward: "+10 for a goal, -0.01 per step".into(),
            },
            sectors,
            ball: [0.0; 2],
            keeper: 0.0,
            t: 0,
            done: true,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.ball[0], self.ball[1], self.keeper]
    }

    /// Aim point on the goal line for shooting action `k` with parameter `p`.
    fn aim(&self, k: usize, p: f64) -> f64 {
        let unit = (p + 1.0) / 2.0;
        if self.sectors == 0 {
            if k == 1 {
                -MOUTH + unit * MOUTH
            } else {
                unit * MOUTH
            }
        } else {
            let width = 2.0 * MOUTH / self.sectors as f64;
            -MOUTH + width * ((k - 1) as f64 + unit)
        }
    }
}

impl Default for Goal {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Goal {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.ball = [rng.random_range(-0.8..=-0.2), rng.random_range(-0.6..=0.6)];
        self.keeper = rng.random_range(-0.2..=0.2);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let params = validated_params(&self.spec, action)?;
        let slice = &params[self.spec.param_slices[action.k].clone()];
        self.t += 1;
        let mut success = false;
        let mut shot = false;
        if action.k == 0 {
            let dx = slice[0] - self.ball[0];
            let dy = slice[1] - self.ball[1];
            let len = (dx * dx + dy * dy).sqrt();
            let scale = if len > KICK_RANGE { KICK_RANGE / len } else { 1.0 };
            self.ball[0] = (self.ball[0] + dx * scale).clamp(-1.0, 1.0);
            self.ball[1] = (self.ball[1] + dy * scale).clamp(-1.0, 1.0);
            let chase = (self.ball[1] - self.keeper).clamp(-KEEPER_SPEED, KEEPER_SPEED);
            self.keeper = (self.keeper + chase).clamp(-MOUTH, MOUTH);
        } else {
            shot = true;
            let to_line = 1.0 - self.ball[0];
            let aim = self.aim(action.k, slice[0]);
            let reach = 0.1 + 0.3 * to_line;
            success = to_line <= MAX_SHOT && (aim - self.keeper).abs() > reach && aim.abs() <= MOUTH;
        }
        self.done = shot || self.t >= self.spec.horizon;
        let reward = if success { 10.0 } else { 0.0 } - 0.01;
        let mut info = BTreeMap::new();
        info.insert("distance_to_line".to_string(), 1.0 - self.ball[0]);
        Ok(StepResult {
            state: self.observe(),
            reward,
            done: self.done,
            success,
            info,
        })
    }
}

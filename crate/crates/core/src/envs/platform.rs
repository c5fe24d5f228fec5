//! Kinematic port of the Platform task.
//!
//! The agent travels along `x ∈ [0, 1]` over three platforms separated by
//! gaps at `[0.30, 0.40)` and `[0.65, 0.75)`. An enemy patrols the first two
//! platforms. Actions: `RUN(d)`, `HOP(d)`, `LEAP(d)` move forward by
//! `(d + 1) / 2` times 0.1, 0.15 and 0.3 respectively. Running into or
//! landing in a gap, or running into the enemy, ends the episode; hops and
//! leaps clear the enemy. Reaching `x >= 1` succeeds.
//!
//! State is `(x, enemy x, enemy direction)`. Reward is the forward progress,
//! with +1 on success. Horizon 30.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{validated_params, Env, EnvSpec, HybridAction, StepResult};
use crate::{Error, Result};

const GAPS: [(f64, f64); 2] = [(0.30, 0.40), (0.65, 0.75)];
const REACH: [f64; 3] = [0.1, 0.15, 0.3];
const ENEMY_SPEED: f64 = 0.04;
const ENEMY_RADIUS: f64 = 0.03;

pub const RUN: usize = 0;
pub const HOP: usize = 1;
pub const LEAP: usize = 2;

#[derive(Debug, Clone)]
pub struct Platform {
    spec: EnvSpec,
    x: f64,
    enemy: f64,
    enemy_dir: f64,
    t: usize,
    done: bool,
}

impl Default for Platform {
    fn default() -> Self {
        Self::new()
    }
}

fn in_gap(x: f64) -> bool {
    GAPS.iter().any(|&(lo, hi)| x >= lo && x < hi)
}

/// Platform the enemy patrols: `[lo, hi]` of the platform containing `x`.
fn enemy_bounds(x: f64) -> (f64, f64) {
    if x < GAPS[0].0 {
        (0.15, GAPS[0].0)
    } else {
        (GAPS[0].1, GAPS[1].0)
    }
}

impl Platform {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "platform".into(),
                obs_dim: 3,
                num_discrete: 3,
                action_dim: 3,
                horizon: 30,
                param_slices: vec![0..1, 1..2, 2..3],
                success: "reach the end of the last platform".into(),
                reward: "forward progress per step, +1 on success".into(),
            },
            x: 0.0,
            enemy: 0.2,
            enemy_dir: 1.0,
            t: 0,
            done: true,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.x, self.enemy, self.enemy_dir]
    }
}

impl Env for Platform {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = 0.0;
        self.enemy = rng.random_range(0.15..0.30);
        self.enemy_dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &HybridAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let params = validated_params(&self.spec, action)?;
        let d = (params[self.spec.param_slices[action.k].start] + 1.0) / 2.0;
        self.t += 1;
        let start = self.x;
        let end = (start + d * REACH[action.k]).min(1.0);
        let mut failed = false;
        if action.k == RUN {
            let crosses_gap = GAPS.iter().any(|&(lo, _)| start < lo && end >= lo);
            let hits_enemy = self.enemy >= start - ENEMY_RADIUS && self.enemy <= end + ENEMY_RADIUS;
            failed = crosses_gap || hits_enemy;
        }
        self.x = end;
        failed |= in_gap(self.x);

        let (lo, hi) = enemy_bounds(self.x.min(GAPS[1].0 - 1e-9));
        if self.enemy < lo || self.enemy > hi {
            self.enemy = (lo + hi) / 2.0;
        }
        self.enemy += self.enemy_dir * ENEMY_SPEED;
        if self.enemy <= lo || self.enemy >= hi {
            self.enemy = self.enemy.clamp(lo, hi);
            self.enemy_dir = -self.enemy_dir;
        }
        if !failed && action.k == RUN && (self.enemy - self.x).abs() < ENEMY_RADIUS {
            failed = true;
        }

        let success = !failed && self.x >= 1.0;
        let reward = (self.x - start) + if success { 1.0 } else { 0.0 };
        self.done = success || failed || self.t >= self.spec.horizon;
        let mut info = BTreeMap::new();
        info.insert("x".to_string(), self.x);
        Ok(StepResult {
            state: self.observe(),
            reward,
            done: self.done,
            success,
            info,
        })
    }
}

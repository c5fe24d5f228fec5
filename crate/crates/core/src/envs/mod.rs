//! Parameterized-action environments behind one stepping contract.
//!
//! Every environment exposes a fixed-width continuous parameter vector; each
//! discrete action `k` reads its own slice of it ([`EnvSpec::param_slices`]).

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub mod catch_point;
pub mod goal;
pub mod hard_move;
pub mod platform;

pub use catch_point::CatchPoint;
pub use goal::Goal;
pub use hard_move::{base_direction, HardMove};
pub use platform::Platform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAction {
    pub k: usize,
    pub params: Vec<f64>,
}

impl HybridAction {
    pub fn new(k: usize, params: Vec<f64>) -> Self {
        Self { k, params }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub obs_dim: usize,
    /// Number of discrete actions `K`.
    pub num_discrete: usize,
    /// Width of the shared continuous parameter vector.
    pub action_dim: usize,
    /// Episode horizon `T`.
    pub horizon: usize,
    pub param_slices: Vec<Range<usize>>,
    pub success: String,
    pub reward: String,
}

impl EnvSpec {
    pub fn is_single_step(&self) -> bool {
        self.horizon == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub info: BTreeMap<String, f64>,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the initial state depends only on `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &HybridAction) -> Result<StepResult>;
}

/// Checks `action` against `spec` and returns its parameters clamped to `[-1, 1]`.
pub(crate) fn validated_params(spec: &EnvSpec, action: &HybridAction) -> Result<Vec<f64>> {
    if action.k >= spec.num_discrete {
        return Err(Error::InvalidConfig(format!(
            "discrete action {} out of range for {} (K = {})",
            action.k, spec.id, spec.num_discrete
        )));
    }
    if action.params.len() != spec.action_dim {
        return Err(Error::DimensionMismatch {
            what: "continuous parameters",
            expected: spec.action_dim,
            actual: action.params.len(),
        });
    }
    Ok(action.params.iter().map(|p| p.clamp(-1.0, 1.0)).collect())
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Every registered environment id.
pub fn env_ids() -> Vec<String> {
    let mut ids = Vec::new();
    for n in [4, 6, 8, 10] {
        ids.push(format!("hard_move_n{n}"));
        ids.push(format!("hard_move_n{n}_single_step"));
    }
    ids.extend(["catch_point", "goal", "hard_goal", "platform"].map(String::from));
    ids
}

/// Builds an environment from its registry id.
pub fn make_env(id: &str) -> Result<Box<dyn Env>> {
    if let Some(rest) = id.strip_prefix("hard_move_n") {
        let (n, single) = match rest.strip_suffix("_single_step") {
            Some(n) => (n, true),
            None => (rest, false),
        };
        if let Ok(n) = n.parse::<usize>() {
            if (1..=12).contains(&n) {
                return Ok(Box::new(if single {
                    HardMove::single_step(n)
                } else {
                    HardMove::new(n)
                }));
            }
        }
        return Err(Error::UnknownEnv(id.to_string()));
    }
    match id {
        "catch_point" => Ok(Box::new(CatchPoint::new())),
        "goal" => Ok(Box::new(Goal::new())),
        "hard_goal" => Ok(Box::new(Goal::hard())),
        "platform" => Ok(Box::new(Platform::new())),
        _ => Err(Error::UnknownEnv(id.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_action(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> HybridAction {
        HybridAction::new(
            rng.random_range(0..spec.num_discrete),
            (0..spec.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        )
    }

    #[test]
    fn registry_builds_every_id() {
        for id in env_ids() {
            let env = make_env(&id).unwrap();
            assert_eq!(env.spec().id, id);
            assert!(env.spec().num_discrete >= 1 && env.spec().horizon >= 1);
            assert_eq!(env.spec().param_slices.len(), env.spec().num_discrete);
        }
        assert!(matches!(make_env("hard_move_nx"), Err(Error::UnknownEnv(_))));
        assert!(matches!(make_env("pong"), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn hard_move_discrete_space_scales_as_powers_of_two() {
        for n in [4, 6, 8, 10] {
            let env = make_env(&format!("hard_move_n{n}")).unwrap();
            assert_eq!(env.spec().num_discrete, 1 << n);
        }
    }

    #[test]
    fn same_seed_and_actions_give_same_trajectory() {
        for id in env_ids() {
            let run = || {
                let mut env = make_env(&id).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                let mut trace = vec![env.reset(17)];
                loop {
                    let a = random_action(env.spec(), &mut rng);
                    let r = env.step(&a).unwrap();
                    trace.push(r.state.clone());
                    if r.done {
                        break;
                    }
                }
                trace
            };
            assert_eq!(run(), run(), "{id}");
        }
    }

    #[test]
    fn success_implies_done_and_finished_episodes_reject_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for id in env_ids() {
            let mut env = make_env(&id).unwrap();
            for ep in 0..200 {
                env.reset(ep);
                loop {
                    let a = random_action(env.spec(), &mut rng);
                    let r = env.step(&a).unwrap();
                    assert!(!r.success || r.done, "{id}");
                    if r.done {
                        assert!(matches!(env.step(&a), Err(Error::EpisodeFinished)));
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut env = make_env("hard_move_n4").unwrap();
        env.reset(0);
        assert!(env.step(&HybridAction::new(16, vec![0.0])).is_err());
        assert!(env.step(&HybridAction::new(0, vec![0.0, 0.0])).is_err());
    }
}

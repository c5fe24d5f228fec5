use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{mean_std, read_json, write_file, write_json};
use crate::envs::{base_direction, distance, Env, EnvSpec, HybridAction};
use crate::{Agent, Error, Result, Rng};

/// Anything that maps a state to a hybrid action.
pub trait Policy {
    fn act(&self, state: &[f64], rng: &mut Rng) -> Result<HybridAction>;
}

impl Policy for Agent {
    fn act(&self, state: &[f64], rng: &mut Rng) -> Result<HybridAction> {
        Ok(Agent::act(self, state, rng, false)?.hybrid())
    }
}

/// Uniform discrete index and uniform parameters in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    num_discrete: usize,
    action_dim: usize,
}

impl RandomPolicy {
    pub fn new(spec: &EnvSpec) -> Self {
        Self {
            num_discrete: spec.num_discrete,
            action_dim: spec.action_dim,
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&self, _state: &[f64], rng: &mut Rng) -> Result<HybridAction> {
        let k = rng.random_range(0..self.num_discrete);
        let params = (0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Ok(HybridAction::new(k, params))
    }
}

/// Geometric Hard Move oracle: over every mask and `c = ±1`, take the step
/// that lands closest to the target.
#[derive(Debug, Clone)]
pub struct ScriptedHardMove {
    actuators: usize,
    move_scale: f64,
}

impl ScriptedHardMove {
    pub fn new(actuators: usize, move_scale: f64) -> Self {
        Self { actuators, move_scale }
    }
}

impl Policy for ScriptedHardMove {
    fn act(&self, state: &[f64], _rng: &mut Rng) -> Result<HybridAction> {
        if state.len() != 4 {
            return Err(Error::DimensionMismatch {
                what: "hard move state",
                expected: 4,
                actual: state.len(),
            });
        }
        let pos = [state[0], state[1]];
        let target = [state[2], state[3]];
        let mut best = (f64::INFINITY, 0, 0.0);
        for mask in 0..(1usize << self.actuators) {
            let d = base_direction(mask, self.actuators);
            for c in [1.0, -1.0] {
                let next = [pos[0] + c * self.move_scale * d[0], pos[1] + c * self.move_scale * d[1]];
                let dist = distance(next, target);
                if dist < best.0 {
                    best = (dist, mask, c);
                }
            }
        }
        Ok(HybridAction::new(best.1, vec![best.2]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
}

/// One transition of an exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub episode: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub k: usize,
    pub params: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Runs `episodes` episodes, each reset with a fresh seed drawn from `rng`.
pub fn evaluate(policy: &dyn Policy, env: &mut dyn Env, episodes: usize, rng: &mut Rng) -> Result<EvalResult> {
    evaluate_traced(policy, env, episodes, rng, None)
}

/// [`evaluate`], optionally writing every transition as one JSON line.
pub fn evaluate_traced(
    policy: &dyn Policy,
    env: &mut dyn Env,
    episodes: usize,
    rng: &mut Rng,
    mut trace: Option<&mut dyn Write>,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut successes = 0usize;
    let mut total_return = 0.0;
    let mut total_len = 0usize;
    for episode in 0..episodes {
        let mut state = env.reset(rng.random());
        for t in 0.. {
            let action = policy.act(&state, rng)?;
            let r = env.step(&action)?;
            total_return += r.reward;
            total_len += 1;
            if let Some(w) = trace.as_deref_mut() {
                let step = TraceStep {
                    episode,
                    t,
                    state: state.clone(),
                    k: action.k,
                    params: action.params.clone(),
                    reward: r.reward,
                    done: r.done,
                    success: r.success,
                };
                let line = serde_json::to_string(&step)?;
                writeln!(w, "{line}").map_err(|e| Error::io("<trace>", e))?;
            }
            if r.done {
                successes += usize::from(r.success);
                break;
            }
            state = r.state;
        }
    }
    let n = episodes as f64;
    Ok(EvalResult {
        episodes,
        success_rate: successes as f64 / n,
        mean_return: total_return / n,
        mean_length: total_len as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// One training run's evaluation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCurve {
    pub run: String,
    pub seed: u64,
    pub points: Vec<EvalPoint>,
    /// Mean success rate over the final window of evaluations.
    pub final_score: f64,
}

/// Number of trailing evaluations averaged into a trial's score.
pub const FINAL_WINDOW: usize = 5;

impl TrialCurve {
    pub fn new(run: impl Into<String>, seed: u64, points: Vec<EvalPoint>) -> Self {
        let final_score = final_window_score(&points, FINAL_WINDOW);
        Self {
            run: run.into(),
            seed,
            points,
            final_score,
        }
    }
}

/// Mean success rate of the last `window` points (fewer if the curve is short).
pub fn final_window_score(points: &[EvalPoint], window: usize) -> f64 {
    let tail = &points[points.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|p| p.success_rate).sum::<f64>() / tail.len() as f64
}

/// Per-trial curves and their aggregate: mean ± population std of the
/// per-trial final-window scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub final_window: usize,
    pub trials: Vec<TrialCurve>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_trials(trials: Vec<TrialCurve>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Analysis("no trials to aggregate".into()));
        }
        for t in &trials {
            if let Some(p) = t.points.iter().find(|p| !(0.0..=1.0).contains(&p.success_rate)) {
                return Err(Error::Analysis(format!("success rate {} outside [0, 1]", p.success_rate)));
            }
        }
        let scores: Vec<f64> = trials.iter().map(|t| t.final_score).collect();
        let (mean, std) = mean_std(&scores);
        Ok(Self {
            final_window: FINAL_WINDOW,
            trials,
            mean,
            std,
        })
    }

    /// Merges the reports of several run directories, one trial each.
    pub fn aggregate_runs(run_dirs: &[PathBuf]) -> Result<Self> {
        let mut trials = Vec::new();
        for dir in run_dirs {
            let report: EvalReport = read_json(&dir.join("eval_report.json"))?;
            trials.extend(report.trials);
        }
        Self::from_trials(trials)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,seed,step,success_rate,mean_return\n");
        for t in &self.trials {
            for p in &t.points {
                out.push_str(&format!("{},{},{},{},{}\n", t.run, t.seed, p.step, p.success_rate, p.mean_return));
            }
        }
        out.push_str(&format!("aggregate,,,{},{}\n", self.mean, self.std));
        out
    }

    /// Writes `eval_report.json` and `eval_report.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("eval_report.json"), self)?;
        write_file(&dir.join("eval_report.csv"), self.to_csv())
    }
}

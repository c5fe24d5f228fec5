use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalPoint, EvalReport, TrialCurve};
use super::{write_file, write_json, Checkpoint, RunConfig};
use crate::envs::make_env;
use crate::trainer::{train_iteration, AblationFlags, IterationMetrics};
use crate::{Agent, Error, ReplayBuffer, Result, Rng, Transition};

/// Mixed into the run seed to derive the evaluation stream.
const EVAL_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Self-description of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub env: String,
    pub seed: u64,
    pub config_hash: String,
    pub initial_param_hash: String,
    pub final_param_hash: Option<String>,
    pub ablation: AblationFlags,
    pub betas: Vec<f64>,
    pub total_steps: usize,
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub report: EvalReport,
    pub final_param_hash: String,
    pub iterations: u64,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Record<'a> {
    Train {
        step: usize,
        #[serde(flatten)]
        metrics: &'a IterationMetrics,
    },
    Eval {
        step: usize,
        success_rate: f64,
        mean_return: f64,
        mean_length: f64,
        episodes: usize,
    },
}

struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn write(&mut self, record: &Record<'_>) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Trains into `config.output_dir`.
pub fn train(config: &RunConfig) -> Result<RunSummary> {
    train_into(config, &config.output_dir)
}

/// Full loop: random warmup, then act → store → train every `train_every`
/// steps, evaluating every `eval_interval` steps with a separate rng.
pub fn train_into(config: &RunConfig, run_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let tc = &config.train;
    let ckpt_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write_file(&run_dir.join("config.toml"), config.to_toml()?)?;

    let mut env = make_env(&config.env)?;
    let mut eval_env = make_env(&config.env)?;
    let spec = env.spec().clone();
    let schedule = config.schedule.build(tc.diffusion_steps)?;
    let mut rng = Rng::seed_from_u64(tc.seed);
    let mut eval_rng = Rng::seed_from_u64(tc.seed ^ EVAL_SEED_SALT);
    let mut agent = Agent::new(&spec, tc, &config.network, &config.critic, schedule.clone(), &mut rng)?;

    let mut manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        env: config.env.clone(),
        seed: tc.seed,
        config_hash: config.hash()?,
        initial_param_hash: agent.param_hash(),
        final_param_hash: None,
        ablation: tc.ablation,
        betas: schedule.betas().to_vec(),
        total_steps: tc.total_steps,
        checkpoints: Vec::new(),
    };
    let manifest_path = run_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let mut metrics = MetricsWriter::create(run_dir.join("metrics.jsonl"))?;
    let mut buffer = ReplayBuffer::new(tc.buffer_capacity);
    let mut points = Vec::new();
    let mut state = env.reset(rng.random());

    for step in 1..=tc.total_steps {
        let out = if step <= tc.warmup_steps {
            agent.random_action(&mut rng)
        } else {
            agent.act(&state, &mut rng, true)?
        };
        let r = env.step(&out.hybrid())?;
        let next = if r.done { env.reset(rng.random()) } else { r.state.clone() };
        buffer.push(Transition {
            state: std::mem::replace(&mut state, next),
            latent: out.latent,
            k: out.k,
            action: out.action,
            reward: r.reward,
            next_state: r.state,
            done: r.done,
        });

        if step > tc.warmup_steps && step % tc.train_every == 0 && buffer.len() >= tc.batch_size {
            let m = train_iteration(&mut agent, &buffer, tc.batch_size, &mut rng)?;
            metrics.write(&Record::Train { step, metrics: &m })?;
        }
        if step % tc.eval_interval == 0 || step == tc.total_steps {
            let res = evaluate(&agent, eval_env.as_mut(), config.eval_episodes, &mut eval_rng)?;
            log::info!(
                "{} step {step}: success {:.3}, return {:.3}",
                config.env,
                res.success_rate,
                res.mean_return
            );
            metrics.write(&Record::Eval {
                step,
                success_rate: res.success_rate,
                mean_return: res.mean_return,
                mean_length: res.mean_length,
                episodes: res.episodes,
            })?;
            points.push(EvalPoint {
                step,
                success_rate: res.success_rate,
                mean_return: res.mean_return,
            });
        }
        if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 && step < tc.total_steps {
            let name = format!("step_{step:08}.json");
            Checkpoint::new(config, step, &agent, &rng)?.save(&ckpt_dir.join(&name))?;
            manifest.checkpoints.push(name);
        }
    }
    metrics.flush()?;

    Checkpoint::new(config, tc.total_steps, &agent, &rng)?.save(&ckpt_dir.join("final.json"))?;
    manifest.checkpoints.push("final.json".into());
    let final_param_hash = agent.param_hash();
    manifest.final_param_hash = Some(final_param_hash.clone());
    write_json(&manifest_path, &manifest)?;

    let run_name = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = EvalReport::from_trials(vec![TrialCurve::new(run_name, tc.seed, points)])?;
    report.save(run_dir)?;
    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        report,
        final_param_hash,
        iterations: agent.iterations(),
    })
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use chdp::envs::{make_env, HardMove};
use chdp::harness::eval::evaluate_traced;
use chdp::harness::{analyze_modes, plot_runs, train, Checkpoint, EvalReport, Policy, RandomPolicy, RunConfig, ScriptedHardMove};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "chdp", version, about = "Cooperative hybrid diffusion policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Random,
    Scripted,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config; writes a self-describing run directory.
    Train {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `train.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint or a baseline, or aggregate run directories.
    Eval {
        #[arg(long, conflicts_with_all = ["baseline", "runs"])]
        checkpoint: Option<PathBuf>,
        /// Evaluate a built-in policy instead of a checkpoint (needs --env).
        #[arg(long, value_enum, requires = "env")]
        baseline: Option<Baseline>,
        #[arg(long)]
        env: Option<String>,
        /// Aggregate the final-window scores of these run directories.
        #[arg(long, num_args = 1.., conflicts_with = "checkpoint")]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every transition as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Directory for eval_report.json / eval_report.csv (aggregation only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Action statistics of a single-step Hard Move checkpoint.
    AnalyzeModes {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for mode_report.{json,csv} and codebook.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Success-rate curves; each directory is one run or a directory of seeds.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "success.svg")]
        out: PathBuf,
        #[arg(long, default_value = "Success rate")]
        title: String,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, output_dir, seed } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let summary = train(&cfg)?;
            println!("{}", summary.run_dir.display());
            println!("final-window success rate: {:.3}", summary.report.mean);
        }
        Command::Eval {
            checkpoint,
            baseline,
            env,
            runs,
            episodes,
            seed,
            trace,
            out,
        } => {
            if !runs.is_empty() {
                let report = EvalReport::aggregate_runs(&runs)?;
                if let Some(dir) = out {
                    std::fs::create_dir_all(&dir)?;
                    report.save(&dir)?;
                }
                println!("{}", serde_json::to_string_pretty(&report)?);
                return Ok(());
            }
            let (policy, env_id): (Box<dyn Policy>, String) = match (checkpoint, baseline) {
                (Some(path), None) => {
                    let ckpt = Checkpoint::load(&path)?;
                    if let Some(id) = &env {
                        ckpt.check_env(id)?;
                    }
                    let id = ckpt.env.clone();
                    (Box::new(ckpt.agent), id)
                }
                (None, Some(kind)) => {
                    let id = env.expect("clap enforces --env");
                    let probe = make_env(&id)?;
                    let policy: Box<dyn Policy> = match kind {
                        Baseline::Random => Box::new(RandomPolicy::new(probe.spec())),
                        Baseline::Scripted => {
                            let Some(n) = id
                                .strip_prefix("hard_move_n")
                                .and_then(|rest| rest.split('_').next())
                                .and_then(|n| n.parse().ok())
                            else {
                                bail!("the scripted oracle only drives hard_move tasks");
                            };
                            let scale = if probe.spec().is_single_step() {
                                HardMove::single_step(n).move_scale()
                            } else {
                                HardMove::new(n).move_scale()
                            };
                            Box::new(ScriptedHardMove::new(n, scale))
                        }
                    };
                    (policy, id)
                }
                _ => bail!("give exactly one of --checkpoint, --baseline or --runs"),
            };
            let mut env = make_env(&env_id)?;
            let mut rng = chdp::Rng::seed_from_u64(seed);
            let mut writer = match &trace {
                Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
                None => None,
            };
            let result = evaluate_traced(
                policy.as_ref(),
                env.as_mut(),
                episodes,
                &mut rng,
                writer.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(mut w) = writer {
                w.flush()?;
            }
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::AnalyzeModes {
            checkpoint,
            trials,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut env = make_env(&ckpt.env)?;
            let mut rng = chdp::Rng::seed_from_u64(seed);
            let report = analyze_modes(&ckpt.agent, env.as_mut(), trials, &mut rng)?;
            print!("{}", report.to_table());
            println!("success rate: {:.3}", report.success_rate);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                report.save(&dir)?;
                if let Some(cb) = &ckpt.agent.codebook {
                    let mut counts = vec![0usize; cb.len()];
                    for row in &report.rows {
                        counts[row.mask] = row.count;
                    }
                    let mut csv = String::from("row,selections");
                    for j in 0..cb.dim() {
                        csv.push_str(&format!(",e{j}"));
                    }
                    csv.push('\n');
                    for (k, count) in counts.iter().enumerate() {
                        csv.push_str(&format!("{k},{count}"));
                        for v in cb.row(k) {
                            csv.push_str(&format!(",{v}"));
                        }
                        csv.push('\n');
                    }
                    std::fs::write(dir.join("codebook.csv"), csv)?;
                }
            }
        }
        Command::Plot { dirs, out, title } => {
            let curves = plot_runs(&dirs, &out, &title)?;
            println!("{} ({} curves)", out.display(), curves.len());
        }
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{mean_std, write_file, write_json};
use crate::envs::{base_direction, Env};
use crate::{Agent, Error, Result, Rng};

/// One selected actuator mask and the continuous actions chosen with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mask: usize,
    pub base_direction: [f64; 2],
    pub count: usize,
    pub frequency: f64,
    pub action_mean: f64,
    pub action_std: f64,
}

/// Action statistics over repeated single-step episodes, most frequent mask
/// first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub env: String,
    pub trials: usize,
    pub rows: Vec<ModeRow>,
    pub success_rate: f64,
}

impl ModeReport {
    /// Rows whose frequency is at least `threshold`.
    pub fn modes_above(&self, threshold: f64) -> usize {
        self.rows.iter().filter(|r| r.frequency >= threshold).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mask,base_x,base_y,count,frequency,action_mean,action_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:b},{},{},{},{},{},{}\n",
                r.mask, r.base_direction[0], r.base_direction[1], r.count, r.frequency, r.action_mean, r.action_std
            ));
        }
        out
    }

    /// Table in the paper's layout: direction, frequency, `mean ± std`.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<18} {:>10} {:>18}\n", "base direction", "frequency", "continuous action");
        for r in &self.rows {
            out.push_str(&format!(
                "({:>6.3}, {:>6.3})  {:>9.2}% {:>9.3} ± {:.3}\n",
                r.base_direction[0],
                r.base_direction[1],
                100.0 * r.frequency,
                r.action_mean,
                r.action_std
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("mode_report.json"), self)?;
        write_file(&dir.join("mode_report.csv"), self.to_csv())
    }
}

/// Runs `trials` episodes of a single-step Hard Move task from its fixed start
/// and groups the chosen actions by actuator mask.
pub fn analyze_modes(agent: &Agent, env: &mut dyn Env, trials: usize, rng: &mut Rng) -> Result<ModeReport> {
    let spec = env.spec().clone();
    if !spec.is_single_step() || !spec.id.starts_with("hard_move") {
        return Err(Error::Analysis(format!("{} is not a single-step Hard Move task", spec.id)));
    }
    if trials == 0 {
        return Err(Error::Analysis("mode analysis needs at least one trial".into()));
    }
    if agent.num_discrete() != spec.num_discrete || agent.obs_dim() != spec.obs_dim {
        return Err(Error::Checkpoint(format!("agent does not match {}", spec.id)));
    }
    let actuators = spec.num_discrete.trailing_zeros() as usize;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut successes = 0;
    for _ in 0..trials {
        let state = env.reset(rng.random());
        let out = agent.act(&state, rng, false)?;
        let r = env.step(&out.hybrid())?;
        successes += usize::from(r.success);
        groups.entry(out.k).or_default().push(out.action[0]);
    }
    let mut rows: Vec<ModeRow> = groups
        .into_iter()
        .map(|(mask, actions)| {
            let (action_mean, action_std) = mean_std(&actions);
            ModeRow {
                mask,
                base_direction: base_direction(mask, actuators),
                count: actions.len(),
                frequency: actions.len() as f64 / trials as f64,
                action_mean,
                action_std,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.mask.cmp(&b.mask)));
    Ok(ModeReport {
        env: spec.id,
        trials,
        rows,
        success_rate: successes as f64 / trials as f64,
    })
}

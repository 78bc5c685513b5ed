//! Consecutive-goal trials and the tables that summarize them.

use std::time::Instant;

use reorient_core::env::{DoneReason, Env, EnvConfig};
use reorient_core::nets::categorical::{greedy_action, sample_action};
use reorient_core::rng::{derive_seed, seeded, stream};
use reorient_core::Net;
use serde::{Deserialize, Serialize};

use crate::config::EvalAction;
use crate::metrics::median;
use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub goals: u32,
    /// `dropped`, `timeout` or `reached_50`.
    pub cause: String,
    pub sim_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    pub label: String,
    pub trials: Vec<TrialRecord>,
}

impl TrialTable {
    pub fn goals(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.goals as f64).collect()
    }

    pub fn mean(&self) -> Option<f64> {
        let g = self.goals();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    }

    /// Sample standard deviation (n − 1).
    pub fn std(&self) -> Option<f64> {
        let g = self.goals();
        if g.len() < 2 {
            return (g.len() == 1).then_some(0.0);
        }
        let m = self.mean()?;
        Some((g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (g.len() - 1) as f64).sqrt())
    }

    pub fn median(&self) -> Option<f64> {
        let mut g = self.goals();
        g.sort_by(f64::total_cmp);
        median(&g)
    }

    /// Goals, largest first.
    pub fn sorted(&self) -> Vec<u32> {
        let mut g: Vec<u32> = self.trials.iter().map(|t| t.goals).collect();
        g.sort_unstable_by(|a, b| b.cmp(a));
        g
    }

    pub fn row(&self) -> String {
        let fmt = |v: f64| {
            if v.fract() == 0.0 {
                format!("{v:.0}")
            } else {
                format!("{v:.1}")
            }
        };
        match (self.mean(), self.std(), self.median()) {
            (Some(m), Some(s), Some(med)) => {
                let trials: Vec<String> = self.sorted().iter().map(|g| g.to_string()).collect();
                format!("{:<36} {:>6.1} ± {:<6.1} {:>6}   {}", self.label, m, s, fmt(med), trials.join(", "))
            }
            _ => format!("{:<36} {:>15} {:>6}   -", self.label, "-", "-"),
        }
    }
}

pub fn table_header(first: &str) -> String {
    format!("{:<36} {:>15} {:>6}   Individual trials (sorted)", first, "Mean", "Median")
}

pub fn format_tables(first: &str, tables: &[TrialTable]) -> String {
    let mut out = table_header(first);
    out.push('\n');
    for t in tables {
        out.push_str(&t.row());
        out.push('\n');
    }
    out
}

/// Runs one episode per trial. Trial `t` uses environment seed
/// `derive_seed(seed, t)`, so tables are reproducible and trials independent.
pub fn evaluate(
    label: &str,
    policy: &Net,
    env_cfg: &EnvConfig,
    n_trials: usize,
    seed: u64,
    action: EvalAction,
) -> Result<(TrialTable, f64)> {
    let dim = env_cfg.policy_obs_dim();
    if policy.config.input_dim != dim {
        return Err(CliError::Config(format!(
            "policy expects {} inputs but the environment provides {dim}",
            policy.config.input_dim
        )));
    }
    let start = Instant::now();
    let mut trials = Vec::with_capacity(n_trials);
    let mut logits = vec![0f32; policy.config.outputs];
    let mut obs = Vec::with_capacity(dim);
    for t in 0..n_trials {
        let s = derive_seed(seed, t as u64);
        let mut env = Env::new(env_cfg.clone(), s)?;
        let mut rng = seeded(s, stream::EVAL);
        let mut state = policy.initial_state();
        let record = loop {
            let (po, _) = env.observe();
            obs.clear();
            po.write_to(&mut obs);
            // the policy saw f32 inputs in training
            obs.iter_mut().for_each(|v| *v = *v as f32 as f64);
            policy.step(&obs, &mut state, &mut logits)?;
            let bins = match action {
                EvalAction::Sampled => sample_action(&logits, &mut rng).0,
                EvalAction::Greedy => greedy_action(&logits),
            };
            match env.step(&bins) {
                Ok(ev) => {
                    if let Some(reason) = ev.done {
                        break TrialRecord {
                            goals: env.state.consecutive_goals,
                            cause: reason.as_str().to_string(),
                            sim_seconds: env.state.time,
                        };
                    }
                }
                Err(reorient_core::Error::NonFiniteState) => {
                    log::warn!("trial {t}: simulator diverged, counted as a drop");
                    break TrialRecord {
                        goals: env.state.consecutive_goals,
                        cause: DoneReason::Dropped.as_str().to_string(),
                        sim_seconds: env.state.time,
                    };
                }
                Err(e) => return Err(e.into()),
            }
        };
        trials.push(record);
    }
    let table = TrialTable {
        label: label.to_string(),
        trials,
    };
    Ok((table, start.elapsed().as_secs_f64()))
}

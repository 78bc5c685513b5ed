//! Randomization-holdout and architecture ablations. Each arm trains into its
//! own subdirectory and is evaluated on a common environment; one arm failing
//! does not stop the others.

use std::path::Path;

use reorient_core::env::EnvConfig;
use reorient_core::nets::Core;
use reorient_core::randomization::Holdout;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::evaluate::{evaluate, format_tables, TrialTable};
use crate::metrics::{read_json, write_json};
use crate::train::{load_blob, train, TrainOptions};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub label: String,
    pub table: Option<TrialTable>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: String,
    pub eval_env: String,
    pub arms: Vec<ArmResult>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let tables: Vec<TrialTable> = self.arms.iter().filter_map(|a| a.table.clone()).collect();
        let mut out = format_tables(if self.kind == "holdout" { "Training environment" } else { "Network architecture" }, &tables);
        for a in self.arms.iter().filter(|a| a.error.is_some()) {
            out.push_str(&format!("{:<36} failed: {}\n", a.label, a.error.as_deref().unwrap_or("")));
        }
        out
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn median(&self, name: &str) -> Option<f64> {
        self.arm(name)?.table.as_ref()?.median()
    }
}

/// Trains (or, with `reuse`, picks up a finished run with the same config)
/// and evaluates one arm.
fn run_arm(cfg: &ExperimentConfig, dir: &Path, label: &str, eval_env: &EnvConfig, reuse: bool) -> Result<TrialTable> {
    let ckpt = dir.join("checkpoint.bin");
    let finished = reuse
        && ckpt.exists()
        && std::fs::read_to_string(dir.join("config.toml")).ok().as_deref() == Some(cfg.to_toml().as_str());
    let blob = if finished {
        log::info!("{}: reusing finished run", dir.display());
        load_blob(&ckpt)?
    } else {
        train(cfg, dir, &TrainOptions::default())?
    };
    let (table, _) = evaluate(label, &blob.policy, eval_env, cfg.ablation.n_trials, cfg.eval.seed, cfg.eval.action)?;
    write_json(&dir.join("eval.json"), &table)?;
    Ok(table)
}

fn arm_config(base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    c.train.epochs = base.ablation.epochs;
    c
}

fn collect_arm(name: String, label: String, r: Result<TrialTable>) -> ArmResult {
    match r {
        Ok(t) => ArmResult { name, label, table: Some(t), error: None },
        Err(e) => {
            log::error!("arm {name} failed: {e}");
            ArmResult { name, label, table: None, error: Some(e.to_string()) }
        }
    }
}

/// One arm per configured holdout, all evaluated on the real-analog env.
pub fn ablate_holdouts(base: &ExperimentConfig, out: &Path, reuse: bool) -> Result<AblationReport> {
    let eval_env = base.real_analog_env();
    let mut arms = Vec::new();
    for &h in &base.ablation.arms {
        let cfg = arm_config(&base.with_holdout(h));
        let r = run_arm(&cfg, &out.join(h.as_str()), h.describe(), &eval_env, reuse);
        arms.push(collect_arm(h.as_str().to_string(), h.describe().to_string(), r));
    }
    let report = AblationReport {
        kind: "holdout".into(),
        eval_env: format!("real-analog (seed {})", base.eval.real_analog_seed),
        arms,
    };
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

pub fn arch_label(policy: Core, value: Core) -> String {
    let name = |c: Core| match c {
        Core::Lstm => "LSTM",
        Core::FeedForward => "FF",
    };
    format!("{} policy, {} value", name(policy), name(value))
}

pub fn arch_name(policy: Core, value: Core) -> String {
    let name = |c: Core| match c {
        Core::Lstm => "lstm",
        Core::FeedForward => "ff",
    };
    format!("{}-{}", name(policy), name(value))
}

/// Architecture arms trained and evaluated on the configured environment.
pub fn ablate_architectures(base: &ExperimentConfig, archs: &[(Core, Core)], out: &Path, reuse: bool) -> Result<AblationReport> {
    let eval_env = base.env_config();
    let mut arms = Vec::new();
    for &(p, v) in archs {
        let mut cfg = arm_config(base);
        cfg.net.policy = p;
        cfg.net.value = v;
        let (name, label) = (arch_name(p, v), arch_label(p, v));
        let r = run_arm(&cfg, &out.join(&name), &label, &eval_env, reuse);
        arms.push(collect_arm(name, label, r));
    }
    let report = AblationReport {
        kind: "architecture".into(),
        eval_env: "training distribution".into(),
        arms,
    };
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

pub fn load_report(out: &Path) -> Result<AblationReport> {
    read_json(&out.join("ablation.json"))
}

/// Parses `lstm-lstm`, `ff-lstm`, `ff-ff` and so on.
pub fn parse_arch(s: &str) -> Option<(Core, Core)> {
    let core = |x: &str| match x {
        "lstm" => Some(Core::Lstm),
        "ff" => Some(Core::FeedForward),
        _ => None,
    };
    let (p, v) = s.split_once('-')?;
    Some((core(p)?, core(v)?))
}

pub fn parse_holdout(s: &str) -> Option<Holdout> {
    [Holdout::None, Holdout::ObsNoise, Holdout::Physics, Holdout::Unmodeled, Holdout::All]
        .into_iter()
        .find(|h| h.as_str() == s)
}

//! Tables regenerated from what a run directory holds on disk.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use reorient_rapid::throughput::{measure_workers, scaling_table, Throughput, SECONDS_PER_YEAR};
use reorient_rapid::ParameterBlob;
use serde::{Deserialize, Serialize};

use crate::ablate::AblationReport;
use crate::config::ExperimentConfig;
use crate::evaluate::{format_tables, TrialTable};
use crate::metrics::{read_json, read_jsonl, write_json, EpochRecord, TimingRecord};
use crate::probe::{format_report, ProbeReport};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub workers: usize,
    pub chunks: u64,
    pub wall_seconds: f64,
    pub years_per_hour: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub cores: usize,
    pub rows: Vec<ScalingEntry>,
}

/// Worker-count sweep on this machine; writes `scaling.json` into `dir`.
pub fn measure_scaling(cfg: &ExperimentConfig, blob: &ParameterBlob, workers: &[usize], per_count: Duration, dir: &Path) -> Result<ScalingReport> {
    let env_cfg = cfg.env_config();
    let mut samples: Vec<Throughput> = Vec::new();
    for &w in workers {
        let t = measure_workers(&env_cfg, blob, &cfg.ppo, w, cfg.rapid.envs_per_worker, cfg.rapid.segment_chunks, per_count, cfg.seed)?;
        log::info!("{w} workers: {} chunks in {:.1} s", t.chunks, t.wall_seconds);
        samples.push(t);
    }
    let rows = scaling_table(&samples)
        .into_iter()
        .zip(&samples)
        .map(|(r, s)| ScalingEntry {
            workers: r.workers,
            chunks: s.chunks,
            wall_seconds: s.wall_seconds,
            years_per_hour: r.years_per_hour,
            speedup: r.speedup,
        })
        .collect();
    let report = ScalingReport {
        cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        rows,
    };
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("scaling.json"), &report)?;
    Ok(report)
}

pub fn format_scaling(r: &ScalingReport) -> String {
    let mut out = format!("Scaling ({} cores available)\n{:>8} {:>10} {:>16} {:>8}\n", r.cores, "Workers", "Chunks", "Years/hour", "Speedup");
    for e in &r.rows {
        let _ = writeln!(out, "{:>8} {:>10} {:>16.6} {:>8.2}", e.workers, e.chunks, e.years_per_hour, e.speedup);
    }
    out
}

/// Learning curve: every `stride`-th epoch plus the last.
pub fn format_curve(records: &[EpochRecord], stride: usize) -> String {
    let mut out = format!(
        "{:>6} {:>8} {:>12} {:>9} {:>8} {:>12} {:>8} {:>8}\n",
        "Epoch", "Version", "Sim years", "Episodes", "Median", "Reward/step", "Entropy", "KL"
    );
    let stride = stride.max(1);
    for (i, r) in records.iter().enumerate() {
        if i % stride != 0 && i + 1 != records.len() {
            continue;
        }
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>12.6} {:>9} {:>8} {:>12.4} {:>8.3} {:>8.4}",
            r.epoch,
            r.version,
            r.sim_seconds / SECONDS_PER_YEAR,
            r.episodes,
            r.goals_median.map_or("-".into(), |g| format!("{g}")),
            r.reward_per_step,
            r.entropy,
            r.approx_kl
        );
    }
    out
}

pub fn throughput_line(timing: &[TimingRecord]) -> Option<String> {
    let last = timing.last()?;
    let yph = if last.wall_seconds > 0.0 {
        last.sim_seconds / SECONDS_PER_YEAR / (last.wall_seconds / 3600.0)
    } else {
        0.0
    };
    Some(format!(
        "{:.1} simulated hours in {:.1} wall minutes with {} worker(s): {:.4} years/hour\n",
        last.sim_seconds / 3600.0,
        last.wall_seconds / 60.0,
        last.workers,
        yph
    ))
}

/// Everything reportable in `dir`, in a fixed order. Only `timing.jsonl`
/// and `scaling.json` carry wall-clock numbers.
pub fn render(dir: &Path, stride: usize) -> Result<String> {
    let mut out = String::new();
    let metrics = dir.join("metrics.jsonl");
    if metrics.exists() {
        let recs: Vec<EpochRecord> = read_jsonl(&metrics)?;
        out.push_str(&format_curve(&recs, stride));
    }
    let eval = dir.join("eval.json");
    if eval.exists() {
        let t: TrialTable = read_json(&eval)?;
        out.push('\n');
        out.push_str(&format_tables("Evaluation", &[t]));
    }
    let abl = dir.join("ablation.json");
    if abl.exists() {
        let a: AblationReport = read_json(&abl)?;
        let _ = write!(out, "\n{} ablation, evaluated on {}\n", a.kind, a.eval_env);
        out.push_str(&a.table());
    }
    let probe = dir.join("probe.json");
    if probe.exists() {
        let p: ProbeReport = read_json(&probe)?;
        out.push_str("\nHidden-state probe\n");
        out.push_str(&format_report(&p));
    }
    let timing = dir.join("timing.jsonl");
    if timing.exists() {
        if let Some(l) = throughput_line(&read_jsonl(&timing)?) {
            out.push('\n');
            out.push_str(&l);
        }
    }
    let scaling = dir.join("scaling.json");
    if scaling.exists() {
        out.push('\n');
        out.push_str(&format_scaling(&read_json(&scaling)?));
    }
    Ok(out)
}

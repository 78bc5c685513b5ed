//! Recording files and the calibration command.
//!
//! A recording is line-delimited JSON: a header `{"num_joints", "step_duration"}`
//! followed by one record per step boundary `{"phi", "phid", "bins"}`. The
//! final record carries the end state and no bins.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use reorient_core::calibration::{
    coordinate_descent, default_tunables, record_probe_trajectory, CalibrationProblem, CalibrationResult,
    CalibrationTrajectory,
};
use reorient_core::env::EnvParams;
use reorient_core::randomization::sample_physics;
use reorient_core::rng::{seeded, stream};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    num_joints: usize,
    step_duration: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    phi: Vec<f64>,
    phid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<Vec<u8>>,
}

pub fn write_recording(path: &Path, t: &CalibrationTrajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let k = t.num_joints;
    writeln!(w, "{}", line(&Header { num_joints: k, step_duration: t.step_duration }))?;
    for i in 0..=t.steps() {
        let rec = StepRecord {
            phi: t.phi[i * k..(i + 1) * k].to_vec(),
            phid: t.phid[i * k..(i + 1) * k].to_vec(),
            bins: (i < t.steps()).then(|| t.bins[i * k..(i + 1) * k].to_vec()),
        };
        writeln!(w, "{}", line(&rec))?;
    }
    w.flush()?;
    Ok(())
}

fn line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("record serializes")
}

pub fn read_recording(path: &Path) -> Result<CalibrationTrajectory> {
    let bad = |n: usize, e: &dyn std::fmt::Display| CliError::Config(format!("{}:{n}: {e}", path.display()));
    let file = std::fs::File::open(path).map_err(|e| bad(0, &e))?;
    let mut lines = BufReader::new(file).lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines.next().ok_or_else(|| bad(1, &"empty recording"))?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| bad(1, &e))?;
    let k = header.num_joints;
    let mut t = CalibrationTrajectory {
        num_joints: k,
        step_duration: header.step_duration,
        bins: Vec::new(),
        phi: Vec::new(),
        phid: Vec::new(),
    };
    let mut ended = false;
    for (i, line) in lines {
        let n = i + 1;
        if ended {
            return Err(bad(n, &"record after the final (bin-less) record"));
        }
        let r: StepRecord = serde_json::from_str(&line?).map_err(|e| bad(n, &e))?;
        if r.phi.len() != k || r.phid.len() != k {
            return Err(bad(n, &format!("expected {k} joint angles and velocities")));
        }
        t.phi.extend(r.phi);
        t.phid.extend(r.phid);
        match r.bins {
            Some(b) if b.len() == k => t.bins.extend(b),
            Some(_) => return Err(bad(n, &format!("expected {k} bins"))),
            None => ended = true,
        }
    }
    t.validate()?;
    Ok(t)
}

/// Records the probe on a hidden physics draw. Returns the hidden params too.
pub fn synthesize(cfg: &ExperimentConfig, hidden_seed: u64) -> Result<(EnvParams, CalibrationTrajectory)> {
    let hidden = sample_physics(&cfg.env.params, &cfg.randomization.ranges, &mut seeded(hidden_seed, stream::REAL_ANALOG));
    let traj = record_probe_trajectory(&hidden, &cfg.calibration.probe, &mut seeded(hidden_seed, stream::CALIBRATION))?;
    Ok((hidden, traj))
}

pub fn calibrate(cfg: &ExperimentConfig, traj: &CalibrationTrajectory) -> Result<CalibrationResult> {
    if traj.num_joints != cfg.env.params.num_joints {
        return Err(CliError::Config(format!(
            "recording has {} joints, config has {}",
            traj.num_joints, cfg.env.params.num_joints
        )));
    }
    let problem = CalibrationProblem {
        initial: cfg.env.params.clone(),
        tunables: default_tunables(&cfg.env.params),
        descent: cfg.calibration.descent.clone(),
    };
    Ok(coordinate_descent(&problem, traj)?)
}

pub fn format_result(r: &CalibrationResult) -> String {
    let mut out = format!(
        "replay error {:.6e} -> {:.6e} ({:.1}% reduction), {} sweeps, {} evaluations\n",
        r.initial_error,
        r.final_error,
        100.0 * (1.0 - r.final_error / r.initial_error),
        r.sweeps,
        r.evaluations
    );
    for c in &r.accepted {
        out.push_str(&format!("  sweep {:2} {:<20} {:.6} -> {:.6}  error {:.6e}\n", c.sweep, c.name, c.from, c.to, c.error));
    }
    out
}

//! System identification of joint parameters from open-loop probe recordings.
//!
//! The probe runs on the bare rig (no object), so joint motion depends only
//! on the joint parameters and the action history. Replay restarts the
//! simulator from the recorded joint state at the start of every window and
//! compares angles one window later.

use serde::{Deserialize, Serialize};

use crate::env::{bin_to_action, joint_substep, EnvParams, ACTION_EMA, ACTION_SCALE, NOMINAL_STEP_DURATION, NUM_BINS, SUBSTEPS};
use crate::error::{Error, Result};
use crate::randomization::{backlash, BacklashParams};
use crate::rng::SimRng;

/// Steps per replay window and between window starts: ⌈1 s / 80 ms⌉.
pub const WINDOW_STEPS: usize = 13;

/// Joint-only state of the bare rig, including the actuation pipeline memory.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRig {
    pub phi: Vec<f64>,
    pub phid: Vec<f64>,
    pub ema: Vec<f64>,
    pub slack: Vec<f64>,
}

impl JointRig {
    pub fn at_rest(k: usize) -> Self {
        Self {
            phi: vec![0.0; k],
            phid: vec![0.0; k],
            ema: vec![0.0; k],
            slack: vec![0.0; k],
        }
    }

    /// EMA and backlash update for one step, without moving the joints.
    fn actuate(&mut self, bins: &[u8], params: &EnvParams, dt: f64) -> Vec<f64> {
        (0..params.num_joints)
            .map(|j| {
                self.ema[j] += ACTION_EMA * (bin_to_action(bins[j] as usize) - self.ema[j]);
                let bl = BacklashParams {
                    neg: params.backlash_neg[j],
                    pos: params.backlash_pos[j],
                };
                let (a, s) = backlash(self.ema[j], bl, self.slack[j], dt);
                self.slack[j] = s;
                a
            })
            .collect()
    }

    pub fn step(&mut self, bins: &[u8], params: &EnvParams) {
        let dt = NOMINAL_STEP_DURATION;
        let a = self.actuate(bins, params, dt);
        for j in 0..params.num_joints {
            if params.locked_joint_mask[j] {
                self.phid[j] = 0.0;
                continue;
            }
            let (lo, hi) = params.joint_limits[j];
            let setpoint = (self.phi[j] + a[j] * ACTION_SCALE).clamp(lo, hi);
            for _ in 0..SUBSTEPS {
                let (x, v) = joint_substep(self.phi[j], self.phid[j], setpoint, 0.0, params, j, dt / SUBSTEPS as f64);
                self.phi[j] = x;
                self.phid[j] = v;
            }
        }
    }
}

/// Open-loop probe: action bins and the joint state observed before every
/// step and after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrajectory {
    pub num_joints: usize,
    pub step_duration: f64,
    /// `steps × K`.
    pub bins: Vec<u8>,
    /// `(steps + 1) × K`.
    pub phi: Vec<f64>,
    /// `(steps + 1) × K`.
    pub phid: Vec<f64>,
}

impl CalibrationTrajectory {
    pub fn steps(&self) -> usize {
        self.bins.len() / self.num_joints.max(1)
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.step_duration
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_joints;
        let t = self.steps();
        if k == 0 || t == 0 || self.bins.len() != t * k {
            return Err(Error::Config("calibration trajectory is empty or ragged".into()));
        }
        if self.phi.len() != (t + 1) * k || self.phid.len() != (t + 1) * k {
            return Err(Error::Config(format!(
                "calibration trajectory has {} angle rows for {t} steps",
                self.phi.len() / k
            )));
        }
        if self.bins.iter().any(|&b| b as usize >= NUM_BINS) {
            return Err(Error::Config("calibration trajectory has an out-of-range bin".into()));
        }
        if (self.step_duration - NOMINAL_STEP_DURATION).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "recorded step duration {} s, simulator uses {NOMINAL_STEP_DURATION} s",
                self.step_duration
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Steps of full inward travel; outward travel takes twice as long.
    pub limit_steps: usize,
    pub oscillation_steps: usize,
    /// Oscillation amplitude as a fraction of the action range.
    pub amplitude: f64,
    /// Oscillation periods, s, cycled across joints and over time.
    pub periods: Vec<f64>,
    /// Std of Gaussian noise added to the recorded angles, rad.
    pub angle_noise: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        // 30 s in total
        Self {
            limit_steps: 25,
            oscillation_steps: 275,
            amplitude: 1.0,
            periods: vec![0.7, 1.3, 2.9, 0.45],
            angle_noise: 0.0,
        }
    }
}

/// Limit phase (all joints in, out, back in) then oscillations.
pub fn probe_actions(k: usize, cfg: &ProbeConfig) -> Vec<u8> {
    let mid = (NUM_BINS / 2) as f64;
    let mut bins = Vec::new();
    let l = cfg.limit_steps;
    for (dir, n) in [(1.0, l), (-1.0, 2 * l), (1.0, l)] {
        for _ in 0..n {
            let b = (mid + dir * cfg.amplitude * mid).round() as u8;
            bins.extend(std::iter::repeat_n(b, k));
        }
    }
    let segment = cfg.oscillation_steps / cfg.periods.len().max(1);
    for t in 0..cfg.oscillation_steps {
        let phase_set = (t / segment.max(1)).min(cfg.periods.len().saturating_sub(1));
        let time = t as f64 * NOMINAL_STEP_DURATION;
        for j in 0..k {
            let period = cfg.periods[(phase_set + j) % cfg.periods.len()];
            let s = (2.0 * std::f64::consts::PI * time / period).sin();
            bins.push((mid + cfg.amplitude * mid * s).round().clamp(0.0, (NUM_BINS - 1) as f64) as u8);
        }
    }
    bins
}

/// Runs the probe on the bare rig with `hidden` parameters.
pub fn record_probe_trajectory(hidden: &EnvParams, cfg: &ProbeConfig, rng: &mut SimRng) -> Result<CalibrationTrajectory> {
    use rand_distr::{Distribution, Normal};
    hidden.validate()?;
    let k = hidden.num_joints;
    let bins = probe_actions(k, cfg);
    let steps = bins.len() / k;
    let mut rig = JointRig::at_rest(k);
    let mut phi = Vec::with_capacity((steps + 1) * k);
    let mut phid = Vec::with_capacity((steps + 1) * k);
    let noise = Normal::new(0.0, cfg.angle_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut observe = |rig: &JointRig, phi: &mut Vec<f64>, phid: &mut Vec<f64>| {
        for j in 0..k {
            let n = if cfg.angle_noise > 0.0 { noise.sample(rng) } else { 0.0 };
            phi.push(rig.phi[j] + n);
            phid.push(rig.phid[j]);
        }
    };
    observe(&rig, &mut phi, &mut phid);
    for t in 0..steps {
        rig.step(&bins[t * k..(t + 1) * k], hidden);
        if !rig.phi.iter().chain(&rig.phid).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        observe(&rig, &mut phi, &mut phid);
    }
    Ok(CalibrationTrajectory {
        num_joints: k,
        step_duration: NOMINAL_STEP_DURATION,
        bins,
        phi,
        phid,
    })
}

/// Squared joint-angle error after each window, for windows starting every
/// [`WINDOW_STEPS`] steps. Non-finite simulations give `f64::INFINITY`.
pub fn window_errors(params: &EnvParams, traj: &CalibrationTrajectory) -> Vec<f64> {
    let k = traj.num_joints;
    let steps = traj.steps();
    // actuation memory follows the action history only, so replay it once
    let mut memory = JointRig::at_rest(k);
    let mut starts = Vec::new();
    for t in 0..steps {
        if t % WINDOW_STEPS == 0 && t + WINDOW_STEPS <= steps {
            starts.push((t, memory.ema.clone(), memory.slack.clone()));
        }
        memory.actuate(&traj.bins[t * k..(t + 1) * k], params, NOMINAL_STEP_DURATION);
    }
    starts
        .into_iter()
        .map(|(t0, ema, slack)| {
            let mut rig = JointRig {
                phi: traj.phi[t0 * k..(t0 + 1) * k].to_vec(),
                phid: traj.phid[t0 * k..(t0 + 1) * k].to_vec(),
                ema,
                slack,
            };
            for t in t0..t0 + WINDOW_STEPS {
                rig.step(&traj.bins[t * k..(t + 1) * k], params);
            }
            let end = t0 + WINDOW_STEPS;
            let err: f64 = (0..k).map(|j| (rig.phi[j] - traj.phi[end * k + j]).powi(2)).sum::<f64>() / k as f64;
            if err.is_finite() {
                err
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Mean over windows of the squared joint-angle error one window after the
/// recorded state.
pub fn replay_error(params: &EnvParams, traj: &CalibrationTrajectory) -> f64 {
    let errs = window_errors(params, traj);
    if errs.is_empty() {
        return f64::INFINITY;
    }
    errs.iter().sum::<f64>() / errs.len() as f64
}

/// Parameter the descent may change, with its search interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tunable {
    /// `field[joint]`, e.g. `joint_damping[0]`, or `joint_limits[1].lo`.
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

fn parse_name(name: &str) -> Result<(&str, usize, Option<&str>)> {
    let bad = || Error::Config(format!("unknown tunable '{name}'"));
    let open = name.find('[').ok_or_else(bad)?;
    let close = name.find(']').ok_or_else(bad)?;
    let field = &name[..open];
    let j: usize = name[open + 1..close].parse().map_err(|_| bad())?;
    let rest = &name[close + 1..];
    let side = match rest {
        "" => None,
        ".lo" => Some("lo"),
        ".hi" => Some("hi"),
        _ => return Err(bad()),
    };
    Ok((field, j, side))
}

fn slot<'a>(p: &'a mut EnvParams, name: &str) -> Result<&'a mut f64> {
    let (field, j, side) = parse_name(name)?;
    if j >= p.num_joints {
        return Err(Error::Config(format!("tunable '{name}': joint index out of range")));
    }
    Ok(match (field, side) {
        ("joint_damping", None) => &mut p.joint_damping[j],
        ("p_gain", None) => &mut p.p_gain[j],
        ("friction_loss", None) => &mut p.friction_loss[j],
        ("link_inertia", None) => &mut p.link_inertia[j],
        ("backlash_neg", None) => &mut p.backlash_neg[j],
        ("backlash_pos", None) => &mut p.backlash_pos[j],
        ("joint_limits", Some("lo")) => &mut p.joint_limits[j].0,
        ("joint_limits", Some("hi")) => &mut p.joint_limits[j].1,
        _ => return Err(Error::Config(format!("unknown tunable '{name}'"))),
    })
}

pub fn get_param(p: &EnvParams, name: &str) -> Result<f64> {
    let mut c = p.clone();
    Ok(*slot(&mut c, name)?)
}

pub fn set_param(p: &mut EnvParams, name: &str, value: f64) -> Result<()> {
    *slot(p, name)? = value;
    Ok(())
}

/// Every joint parameter the probe can identify, bounded to ×[1/4, 4] of
/// its current value (limits: ±1 rad).
pub fn default_tunables(p: &EnvParams) -> Vec<Tunable> {
    let mut out = Vec::new();
    for field in ["joint_damping", "p_gain", "friction_loss", "backlash_neg", "backlash_pos"] {
        for j in 0..p.num_joints {
            let name = format!("{field}[{j}]");
            let v = get_param(p, &name).expect("known field");
            out.push(Tunable {
                name,
                lo: v / 4.0,
                hi: v * 4.0,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    pub max_sweeps: usize,
    /// Error evaluations per line search.
    pub line_evaluations: usize,
    /// Relative error improvement a change must bring to be accepted.
    pub min_improvement: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 20,
            line_evaluations: 16,
            min_improvement: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProblem {
    pub initial: EnvParams,
    pub tunables: Vec<Tunable>,
    pub descent: DescentConfig,
}

impl CalibrationProblem {
    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        if self.tunables.is_empty() {
            return Err(Error::Config("calibration needs at least one tunable".into()));
        }
        for t in &self.tunables {
            let v = get_param(&self.initial, &t.name)?;
            if !(t.lo < t.hi) || v < t.lo || v > t.hi {
                return Err(Error::Config(format!(
                    "tunable '{}': bounds [{}, {}] must be ordered and contain {v}",
                    t.name, t.lo, t.hi
                )));
            }
        }
        if self.descent.line_evaluations < 2 {
            return Err(Error::Config("line search needs at least 2 evaluations".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedChange {
    pub sweep: usize,
    pub name: String,
    pub from: f64,
    pub to: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: EnvParams,
    pub initial_error: f64,
    pub final_error: f64,
    pub accepted: Vec<AcceptedChange>,
    pub sweeps: usize,
    pub evaluations: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the minimum of `f` on `[lo, hi]` using `evals`
/// evaluations. Returns the best point seen and its value.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, evals: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 2..evals {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

/// Cyclic coordinate descent with a golden-section line search per
/// parameter. Positive intervals are searched in log space.
pub fn coordinate_descent(problem: &CalibrationProblem, traj: &CalibrationTrajectory) -> Result<CalibrationResult> {
    problem.validate()?;
    traj.validate()?;
    if traj.num_joints != problem.initial.num_joints {
        return Err(Error::Dimension {
            what: "calibration joints",
            expected: problem.initial.num_joints,
            got: traj.num_joints,
        });
    }
    let cfg = &problem.descent;
    let mut params = problem.initial.clone();
    let mut error = replay_error(&params, traj);
    let initial_error = error;
    let mut evaluations = 1;
    let mut accepted = Vec::new();
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for t in &problem.tunables {
            let current = get_param(&params, &t.name)?;
            let log = t.lo > 0.0;
            let (lo, hi) = if log { (t.lo.ln(), t.hi.ln()) } else { (t.lo, t.hi) };
            let mut trial = params.clone();
            let (x, e) = golden_section(
                |x| {
                    let v = if log { x.exp() } else { x };
                    set_param(&mut trial, &t.name, v).expect("validated name");
                    if trial.validate().is_err() {
                        return f64::INFINITY;
                    }
                    replay_error(&trial, traj)
                },
                lo,
                hi,
                cfg.line_evaluations,
            );
            evaluations += cfg.line_evaluations;
            let value = if log { x.exp() } else { x }.clamp(t.lo, t.hi);
            if error > 0.0 && e.is_finite() && (error - e) / error > cfg.min_improvement {
                set_param(&mut params, &t.name, value)?;
                accepted.push(AcceptedChange {
                    sweep: sweeps,
                    name: t.name.clone(),
                    from: current,
                    to: value,
                    error: e,
                });
                error = e;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(CalibrationResult {
        params,
        initial_error,
        final_error: error,
        accepted,
        sweeps,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2), -1.0, 2.0, 40);
        assert!((x - 0.3).abs() < 1e-6);
        assert!(fx < 1e-12);
    }

    #[test]
    fn names_round_trip() {
        let mut p = EnvParams::default();
        set_param(&mut p, "p_gain[2]", 7.0).unwrap();
        set_param(&mut p, "joint_limits[1].lo", -0.5).unwrap();
        assert_eq!(p.p_gain[2], 7.0);
        assert_eq!(get_param(&p, "joint_limits[1].lo").unwrap(), -0.5);
        assert!(get_param(&p, "mass[0]").is_err());
        assert!(get_param(&p, "p_gain[3]").is_err());
    }
}

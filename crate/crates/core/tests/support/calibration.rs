//! Synthetic calibration problems shared by the calibration tests.

use reorient_core::calibration::*;
use reorient_core::env::EnvParams;
use reorient_core::rng::{seeded, stream};

pub fn record(hidden: &EnvParams, cfg: &ProbeConfig) -> CalibrationTrajectory {
    record_probe_trajectory(hidden, cfg, &mut seeded(0, stream::CALIBRATION)).unwrap()
}

pub fn problem(initial: &EnvParams, names: &[&str]) -> CalibrationProblem {
    let all = default_tunables(initial);
    let tunables = if names.is_empty() {
        all
    } else {
        all.into_iter().filter(|t| names.contains(&t.name.as_str())).collect()
    };
    CalibrationProblem {
        initial: initial.clone(),
        tunables,
        descent: DescentConfig::default(),
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn five_parameter_start(truth: &EnvParams) -> EnvParams {
    let mut s = truth.clone();
    s.joint_damping[0] *= 1.8;
    s.p_gain[1] *= 0.6;
    s.friction_loss[2] *= 2.0;
    s.backlash_pos[0] *= 0.5;
    s.backlash_neg[1] *= 1.7;
    s
}

pub const FIVE: [&str; 5] = [
    "joint_damping[0]",
    "p_gain[1]",
    "friction_loss[2]",
    "backlash_pos[0]",
    "backlash_neg[1]",
];

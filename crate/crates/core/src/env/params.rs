use serde::{Deserialize, Serialize};

use super::quat::Vec3;
use crate::error::{Error, Result};

/// Physical parameters of the spinner rig. Every field is a randomization or
/// calibration target. SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub num_joints: usize,
    pub object_dim_scale: f64,
    /// Edge length of the cubic object at unit scale, m.
    pub object_size: f64,
    pub object_mass: f64,
    /// Centre-of-mass offset in the object frame, m.
    pub com_offset: Vec3,
    /// Rotational inertia of each actuated link, kg·m².
    pub link_inertia: Vec<f64>,
    pub joint_damping: Vec<f64>,
    pub p_gain: Vec<f64>,
    pub friction_coupling: Vec<f64>,
    /// Coulomb friction torque of each joint, N·m.
    pub friction_loss: Vec<f64>,
    pub joint_limits: Vec<(f64, f64)>,
    pub gravity: Vec3,
    pub palm_stiffness: f64,
    pub palm_radius: f64,
    /// Contact slip speed a fingertip tolerates before its grip gives way, rad/s.
    pub grip_slip: f64,
    /// Lateral force per unit of slip beyond `grip_slip`, N·s/rad.
    pub slip_force: f64,
    pub locked_joint_mask: Vec<bool>,
    /// Calibrated backlash per joint for negative commands.
    pub backlash_neg: Vec<f64>,
    /// Calibrated backlash per joint for positive commands.
    pub backlash_pos: Vec<f64>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self::with_joints(3)
    }
}

impl EnvParams {
    pub fn with_joints(k: usize) -> Self {
        Self {
            num_joints: k,
            object_dim_scale: 1.0,
            object_size: 0.05,
            object_mass: 0.1,
            com_offset: [0.0, 0.0, -1e-4],
            link_inertia: vec![1e-3; k],
            joint_damping: vec![0.1; k],
            p_gain: vec![2.5; k],
            friction_coupling: vec![1e-3; k],
            friction_loss: vec![0.02; k],
            joint_limits: vec![(-30.0, 30.0); k],
            gravity: [0.0, 0.0, -9.81],
            palm_stiffness: 100.0,
            palm_radius: 0.04,
            grip_slip: 1.0,
            slip_force: 10.0,
            locked_joint_mask: vec![false; k],
            backlash_neg: vec![10.0; k],
            backlash_pos: vec![10.0; k],
        }
    }

    /// Diagonal of the object inertia tensor in its own frame.
    pub fn inertia_diag(&self) -> Vec3 {
        let s = self.object_size * self.object_dim_scale;
        let i = self.object_mass * s * s / 6.0;
        [i, i, i]
    }

    /// Angular speed transmitted to the object per unit joint speed. Larger
    /// objects turn more slowly under the same fingertip motion.
    pub fn contact_ratio(&self) -> f64 {
        1.0 / self.object_dim_scale
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_joints;
        if k == 0 {
            return Err(Error::InvalidParams("num_joints must be positive".into()));
        }
        let per_joint = [
            ("link_inertia", self.link_inertia.len()),
            ("joint_damping", self.joint_damping.len()),
            ("p_gain", self.p_gain.len()),
            ("friction_coupling", self.friction_coupling.len()),
            ("friction_loss", self.friction_loss.len()),
            ("joint_limits", self.joint_limits.len()),
            ("locked_joint_mask", self.locked_joint_mask.len()),
            ("backlash_neg", self.backlash_neg.len()),
            ("backlash_pos", self.backlash_pos.len()),
        ];
        for (name, len) in per_joint {
            if len != k {
                return Err(Error::InvalidParams(format!(
                    "{name} has {len} entries, expected {k}"
                )));
            }
        }
        let positive = [
            ("object_dim_scale", self.object_dim_scale),
            ("object_size", self.object_size),
            ("object_mass", self.object_mass),
            ("palm_stiffness", self.palm_stiffness),
            ("palm_radius", self.palm_radius),
            ("grip_slip", self.grip_slip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for j in 0..k {
            for (name, v) in [
                ("link_inertia", self.link_inertia[j]),
                ("joint_damping", self.joint_damping[j]),
                ("p_gain", self.p_gain[j]),
                ("backlash_neg", self.backlash_neg[j]),
                ("backlash_pos", self.backlash_pos[j]),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "{name}[{j}] must be positive, got {v}"
                    )));
                }
            }
            if !(self.friction_loss[j] >= 0.0) || !(self.friction_coupling[j] >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "friction_loss[{j}] and friction_coupling[{j}] must be >= 0"
                )));
            }
            let (lo, hi) = self.joint_limits[j];
            if !(lo < hi) {
                return Err(Error::InvalidParams(format!(
                    "joint_limits[{j}]: lo {lo} must be below hi {hi}"
                )));
            }
            if !(lo <= 0.0 && hi >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "joint_limits[{j}] must contain the rest angle 0"
                )));
            }
        }
        if !(self.slip_force >= 0.0 && self.slip_force.is_finite()) {
            return Err(Error::InvalidParams("slip_force must be >= 0".into()));
        }
        if self.com_offset.iter().chain(self.gravity.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite vector field".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("EnvParams serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let p: EnvParams = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

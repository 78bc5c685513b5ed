use serde::{Deserialize, Serialize};

/// Fixed-length trajectory slice: the unit of transport and of truncated BPTT.
///
/// Advantages and value targets are filled in by the worker, which sees the
/// whole rollout segment the chunk was cut from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub len: usize,
    pub policy_dim: usize,
    pub value_dim: usize,
    pub joints: usize,
    /// `len × policy_dim`, as observed (noisy).
    pub policy_obs: Vec<f32>,
    /// `len × value_dim`, noiseless.
    pub value_obs: Vec<f32>,
    /// `len × joints`.
    pub bins: Vec<u8>,
    pub logp: Vec<f32>,
    pub rewards: Vec<f32>,
    /// Value predictions at rollout time, de-normalized.
    pub values: Vec<f32>,
    /// `dones[t]`: the episode ended with transition `t`.
    pub dones: Vec<bool>,
    pub advantages: Vec<f32>,
    pub value_targets: Vec<f32>,
    /// Recurrent state before the first transition.
    pub policy_h0: Vec<f32>,
    pub policy_c0: Vec<f32>,
    pub value_h0: Vec<f32>,
    pub value_c0: Vec<f32>,
    /// Parameter version that generated the chunk.
    pub version: u64,
}

impl Chunk {
    /// `resets[t]`: recurrent state is zeroed before transition `t`.
    pub fn resets(&self) -> Vec<bool> {
        (0..self.len).map(|t| t > 0 && self.dones[t - 1]).collect()
    }

    pub fn policy_obs_f64(&self) -> Vec<f64> {
        self.policy_obs.iter().map(|&v| v as f64).collect()
    }

    pub fn value_obs_f64(&self) -> Vec<f64> {
        self.value_obs.iter().map(|&v| v as f64).collect()
    }

    pub fn bins_at(&self, t: usize) -> Vec<usize> {
        self.bins[t * self.joints..(t + 1) * self.joints]
            .iter()
            .map(|&b| b as usize)
            .collect()
    }

    /// Internal consistency of all array lengths.
    pub fn validate(&self) -> Result<(), String> {
        let t = self.len;
        let checks = [
            ("policy_obs", self.policy_obs.len(), t * self.policy_dim),
            ("value_obs", self.value_obs.len(), t * self.value_dim),
            ("bins", self.bins.len(), t * self.joints),
            ("logp", self.logp.len(), t),
            ("rewards", self.rewards.len(), t),
            ("values", self.values.len(), t),
            ("dones", self.dones.len(), t),
            ("advantages", self.advantages.len(), t),
            ("value_targets", self.value_targets.len(), t),
            ("policy_c0", self.policy_c0.len(), self.policy_h0.len()),
            ("value_c0", self.value_c0.len(), self.value_h0.len()),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(format!("{name} has {got} entries, expected {want}"));
            }
        }
        if t == 0 {
            return Err("empty chunk".into());
        }
        Ok(())
    }
}

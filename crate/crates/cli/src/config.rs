//! Experiment configuration (TOML) and the environments it describes.

use std::path::Path;

use reorient_core::calibration::{DescentConfig, ProbeConfig};
use reorient_core::env::{EnvConfig, EnvParams};
use reorient_core::nets::{Core, NetConfig};
use reorient_core::ppo::PpoConfig;
use reorient_core::randomization::{sample_physics, Holdout, RandomizationConfig, UnmodeledEffects};
use reorient_core::rng::{seeded, stream};
use reorient_core::Net;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvSection,
    pub randomization: RandomizationConfig,
    pub net: NetSection,
    pub ppo: PpoConfig,
    pub rapid: RapidSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub probe: ProbeSection,
    pub calibration: CalibrationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rapid = RapidSection::default();
        Self {
            seed: 0,
            env: EnvSection::default(),
            randomization: RandomizationConfig::default(),
            net: NetSection::default(),
            ppo: PpoConfig {
                batch_chunks: rapid.workers * rapid.envs_per_worker * rapid.segment_chunks,
                ..PpoConfig::default()
            },
            rapid,
            train: TrainSection::default(),
            eval: EvalSection::default(),
            ablation: AblationSection::default(),
            probe: ProbeSection::default(),
            calibration: CalibrationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Adds the (noisy) object position to the policy input.
    pub policy_object_position: bool,
    pub params: EnvParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub policy: Core,
    pub value: Core,
    pub hidden: usize,
    pub memory: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            policy: Core::Lstm,
            value: Core::Lstm,
            hidden: 64,
            memory: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RapidMode {
    /// One worker stepped in lockstep with the optimizer on this thread.
    Local,
    /// Worker threads against in-process stores.
    Threads,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RapidSection {
    pub mode: RapidMode,
    pub workers: usize,
    pub envs_per_worker: usize,
    /// Chunks per environment per epoch.
    pub segment_chunks: usize,
    pub shards: usize,
    pub stores: usize,
    pub store_capacity: usize,
}

impl Default for RapidSection {
    fn default() -> Self {
        Self {
            mode: RapidMode::Local,
            workers: 1,
            envs_per_worker: 64,
            segment_chunks: 8,
            shards: 1,
            stores: 1,
            store_capacity: reorient_rapid::store::DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u64,
    /// Keep a numbered checkpoint every this many epochs (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 200,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalAction {
    /// Draw from the policy distribution, as during training.
    Sampled,
    /// Most likely bin per joint.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_trials: usize,
    pub action: EvalAction,
    pub seed: u64,
    /// Seed of the hidden physics draw of the real-analog environment.
    pub real_analog_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_trials: 100,
            action: EvalAction::Sampled,
            seed: 1,
            real_analog_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub arms: Vec<Holdout>,
    pub n_trials: usize,
    /// Epoch budget per arm; every arm gets the same.
    pub epochs: u64,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            arms: vec![Holdout::None, Holdout::Unmodeled, Holdout::Physics, Holdout::All],
            n_trials: 20,
            epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub episodes: usize,
    /// Simulated time at which the recurrent state is read, s.
    pub time: f64,
    pub train_fraction: f64,
    pub shuffles: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            episodes: 1000,
            time: 5.0,
            train_fraction: 0.8,
            shuffles: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Open-loop probe used by `calibrate --synthesize`.
    pub probe: ProbeConfig,
    pub descent: DescentConfig,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.params.validate().map_err(config_err)?;
        self.ppo.validate().map_err(config_err)?;
        let r = &self.rapid;
        if r.workers == 0 || r.envs_per_worker == 0 || r.segment_chunks == 0 || r.shards == 0 || r.stores == 0 {
            return Err(CliError::Config("rapid counts must all be at least 1".into()));
        }
        if r.mode == RapidMode::Local && r.workers != 1 {
            return Err(CliError::Config("rapid.mode = \"local\" runs exactly one worker".into()));
        }
        let produced = r.workers * r.envs_per_worker * r.segment_chunks;
        if self.ppo.batch_chunks != produced {
            return Err(CliError::Config(format!(
                "ppo.batch_chunks = {} but workers × envs_per_worker × segment_chunks = {produced}",
                self.ppo.batch_chunks
            )));
        }
        if self.net.hidden == 0 || self.net.memory == 0 {
            return Err(CliError::Config("net sizes must be positive".into()));
        }
        if !(self.probe.train_fraction > 0.0 && self.probe.train_fraction < 1.0) {
            return Err(CliError::Config("probe.train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON of everything that shapes training.
    /// Evaluation, ablation and probe settings are left out.
    pub fn hash(&self) -> u64 {
        let key = serde_json::to_string(&(
            self.seed,
            &self.env,
            &self.randomization,
            &self.net,
            &self.ppo,
            &self.rapid,
            &self.train,
        ))
        .expect("config serializes");
        fnv1a(key.as_bytes())
    }

    pub fn env_config(&self) -> EnvConfig {
        let mut c = EnvConfig::new(self.env.params.clone(), self.randomization.clone());
        c.policy_object_position = self.env.policy_object_position;
        c
    }

    pub fn with_holdout(&self, h: Holdout) -> Self {
        let mut c = self.clone();
        c.randomization.apply_holdout(h);
        c
    }

    /// Fixed hidden physics draw with every unmodeled effect and observation
    /// noise active; stands in for the physical rig.
    pub fn real_analog_env(&self) -> EnvConfig {
        real_analog(&self.env.params, &self.randomization, self.eval.real_analog_seed, self.env.policy_object_position)
    }

    pub fn nets(&self) -> Result<(Net, Net)> {
        let env = self.env_config();
        let pc = NetConfig::policy(env.policy_obs_dim(), self.env.params.num_joints, self.net.hidden, self.net.memory, self.net.policy);
        let vc = NetConfig::value(env.value_obs_dim(), self.net.hidden, self.net.memory, self.net.value);
        let mut rng = seeded(self.seed, stream::INIT);
        let mut policy = Net::init(pc, &mut rng)?;
        let mut value = Net::init(vc, &mut rng)?;
        policy.config_hash = self.hash();
        value.config_hash = self.hash();
        Ok((policy, value))
    }
}

pub fn real_analog(base: &EnvParams, rand: &RandomizationConfig, seed: u64, object_position: bool) -> EnvConfig {
    let hidden = sample_physics(base, &rand.ranges, &mut seeded(seed, stream::REAL_ANALOG));
    let cfg = RandomizationConfig {
        physics: false,
        observation_noise: true,
        unmodeled: UnmodeledEffects::all(true),
        ranges: rand.ranges.clone(),
    };
    let mut c = EnvConfig::new(hidden, cfg);
    c.policy_object_position = object_position;
    c
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

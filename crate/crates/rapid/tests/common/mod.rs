#![allow(dead_code)]

use reorient_core::env::{EnvConfig, EnvParams};
use reorient_core::nets::{Core, NetConfig};
use reorient_core::ppo::PpoConfig;
use reorient_core::randomization::RandomizationConfig;
use reorient_core::rng::{seeded, stream};
use reorient_core::{Net, PpoLearner};
use reorient_rapid::worker::WorkerConfig;

pub const ENVS: usize = 4;
pub const SEGMENT: usize = 2;

pub fn env_cfg() -> EnvConfig {
    EnvConfig::new(EnvParams::default(), RandomizationConfig::default())
}

pub fn ppo() -> PpoConfig {
    PpoConfig {
        batch_chunks: ENVS * SEGMENT,
        minibatch_chunks: 4,
        minibatches_per_epoch: 4,
        ..PpoConfig::default()
    }
}

pub fn learner(seed: u64) -> PpoLearner {
    let cfg = env_cfg();
    let mut rng = seeded(seed, stream::INIT);
    let policy = Net::init(NetConfig::policy(cfg.policy_obs_dim(), 3, 16, 8, Core::Lstm), &mut rng).unwrap();
    let value = Net::init(NetConfig::value(cfg.value_obs_dim(), 16, 8, Core::Lstm), &mut rng).unwrap();
    PpoLearner::new(policy, value, ppo(), seed).unwrap()
}

pub fn worker_cfg(id: u32, seed: u64) -> WorkerConfig {
    WorkerConfig::new(id, ENVS, SEGMENT, seed, ppo())
}

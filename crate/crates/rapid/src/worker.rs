//! Rollout worker: fetch the newest parameters, run the randomized
//! environments, push the chunks to a randomly picked store.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use reorient_core::env::EnvConfig;
use reorient_core::ppo::rollout::RolloutStats;
use reorient_core::ppo::{Chunk, PpoConfig};
use reorient_core::rng::{derive_seed, seeded, SimRng};
use reorient_core::EnvRollout;

use crate::blob::ParameterBlob;
use crate::store::StoreHandle;
use crate::wire::encode_chunk;
use crate::{RapidError, Result};

/// Stream for the worker's own choices (store assignment).
const WORKER_STREAM: u64 = 21;

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub id: u32,
    pub num_envs: usize,
    /// Chunks per environment per epoch.
    pub segment_chunks: usize,
    pub seed: u64,
    pub ppo: PpoConfig,
    pub max_attempts: usize,
    pub initial_backoff: Duration,
}

impl WorkerConfig {
    pub fn new(id: u32, num_envs: usize, segment_chunks: usize, seed: u64, ppo: PpoConfig) -> Self {
        Self {
            id,
            num_envs,
            segment_chunks,
            seed,
            ppo,
            max_attempts: 8,
            initial_backoff: Duration::from_millis(20),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct WorkerEpoch {
    pub version: u64,
    pub chunks: usize,
    pub stats: RolloutStats,
}

pub struct Worker {
    pub cfg: WorkerConfig,
    env_cfg: EnvConfig,
    blob: Option<ParameterBlob>,
    rollout: Option<EnvRollout>,
    rng: SimRng,
    pub pushed: u64,
}

impl Worker {
    pub fn new(cfg: WorkerConfig, env_cfg: EnvConfig) -> Self {
        let rng = seeded(derive_seed(cfg.seed, cfg.id as u64), WORKER_STREAM);
        Self {
            cfg,
            env_cfg,
            blob: None,
            rollout: None,
            rng,
            pushed: 0,
        }
    }

    pub fn version(&self) -> Option<u64> {
        self.blob.as_ref().map(|b| b.version)
    }

    /// Takes `blob` unless it is older than the held one.
    pub fn adopt(&mut self, blob: ParameterBlob) -> Result<bool> {
        if let Some(v) = self.version() {
            if blob.version < v {
                return Ok(false);
            }
        }
        if self.rollout.is_none() {
            self.rollout = Some(EnvRollout::new(
                &self.env_cfg,
                self.cfg.num_envs,
                self.cfg.seed,
                &blob.policy,
                &blob.value,
            )?);
        }
        self.blob = Some(blob);
        Ok(true)
    }

    /// Retries `op` on randomly re-picked stores with exponential backoff.
    fn with_store<T>(
        &mut self,
        stores: &mut [Box<dyn StoreHandle>],
        mut op: impl FnMut(&mut dyn StoreHandle) -> Result<T>,
    ) -> Result<T> {
        if stores.is_empty() {
            return Err(RapidError::Unreachable(0));
        }
        let mut wait = self.cfg.initial_backoff;
        for attempt in 0..self.cfg.max_attempts {
            let i = self.rng.random_range(0..stores.len());
            match op(stores[i].as_mut()) {
                Ok(v) => return Ok(v),
                Err(e @ (RapidError::Io(_) | RapidError::Protocol(_))) => {
                    log::warn!("worker {}: store {i} failed ({e}), attempt {}", self.cfg.id, attempt + 1);
                    std::thread::sleep(wait);
                    wait = (wait * 2).min(Duration::from_secs(2));
                }
                Err(other) => return Err(other),
            }
        }
        Err(RapidError::Unreachable(self.cfg.max_attempts))
    }

    /// Fetches the newest blob; true if a blob was adopted.
    pub fn refresh(&mut self, stores: &mut [Box<dyn StoreHandle>]) -> Result<bool> {
        match self.with_store(stores, |s| s.get_params())? {
            Some(bytes) => {
                let blob = ParameterBlob::from_bytes(&bytes)?;
                self.adopt(blob)
            }
            None => Ok(false),
        }
    }

    /// One segment per environment under the held parameters.
    pub fn collect(&mut self) -> Result<(Vec<Chunk>, RolloutStats)> {
        let (Some(blob), Some(rollout)) = (&self.blob, self.rollout.as_mut()) else {
            return Err(RapidError::Protocol("worker has no parameters yet".into()));
        };
        Ok(rollout.collect(&blob.policy, &blob.value, &blob.value_stats, self.cfg.segment_chunks, &self.cfg.ppo)?)
    }

    /// Encodes and pushes chunks, all to one randomly assigned store.
    pub fn push(&mut self, stores: &mut [Box<dyn StoreHandle>], chunks: &[Chunk]) -> Result<()> {
        let id = self.cfg.id;
        let encoded: Vec<Vec<u8>> = chunks.iter().map(|c| encode_chunk(id, c)).collect();
        let mut sent = 0;
        while sent < encoded.len() {
            let n = self.with_store(stores, |s| {
                let mut n = 0;
                for c in &encoded[sent..] {
                    s.push(c)?;
                    n += 1;
                }
                Ok(n)
            })?;
            sent += n;
        }
        self.pushed += encoded.len() as u64;
        Ok(())
    }

    /// Refresh, collect and push.
    pub fn run_epoch(&mut self, stores: &mut [Box<dyn StoreHandle>]) -> Result<WorkerEpoch> {
        self.refresh(stores)?;
        let (chunks, stats) = self.collect()?;
        self.push(stores, &chunks)?;
        Ok(WorkerEpoch {
            version: self.version().unwrap_or(0),
            chunks: chunks.len(),
            stats,
        })
    }
}

/// Runs epochs until `stop` is set or `max_epochs` is reached. Each epoch
/// waits for a parameter version newer than the last one used, so a worker
/// contributes one segment per optimizer epoch.
pub fn worker_loop(
    worker: &mut Worker,
    stores: &mut [Box<dyn StoreHandle>],
    stop: &AtomicBool,
    max_epochs: Option<u64>,
) -> Result<Vec<WorkerEpoch>> {
    let mut done = Vec::new();
    let mut last_used: Option<u64> = None;
    let poll = Duration::from_millis(5);
    let mut idle_since = Instant::now();
    while !stop.load(Ordering::SeqCst) && max_epochs.is_none_or(|m| (done.len() as u64) < m) {
        worker.refresh(stores)?;
        let fresh = match (worker.version(), last_used) {
            (Some(v), Some(u)) => v > u,
            (Some(_), None) => true,
            _ => false,
        };
        if !fresh {
            if idle_since.elapsed() > Duration::from_secs(30) {
                log::info!("worker {} waiting for parameters", worker.cfg.id);
                idle_since = Instant::now();
            }
            std::thread::sleep(poll);
            continue;
        }
        let (chunks, stats) = worker.collect()?;
        worker.push(stores, &chunks)?;
        let version = worker.version().unwrap_or(0);
        last_used = Some(version);
        idle_since = Instant::now();
        done.push(WorkerEpoch {
            version,
            chunks: chunks.len(),
            stats,
        });
    }
    Ok(done)
}

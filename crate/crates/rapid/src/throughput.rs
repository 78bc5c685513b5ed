//! Simulated experience per wall-clock hour, and its scaling with workers.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use reorient_core::env::{EnvConfig, NOMINAL_STEP_DURATION};
use reorient_core::ppo::PpoConfig;

use crate::blob::ParameterBlob;
use crate::store::{LocalStore, Store, StoreHandle};
use crate::worker::{Worker, WorkerConfig};
use crate::Result;

pub const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub workers: usize,
    pub chunks: u64,
    /// Nominal: transitions × 80 ms.
    pub sim_seconds: f64,
    pub wall_seconds: f64,
}

impl Throughput {
    pub fn new(workers: usize, chunks: u64, chunk_len: usize, wall_seconds: f64) -> Self {
        Self {
            workers,
            chunks,
            sim_seconds: chunks as f64 * chunk_len as f64 * NOMINAL_STEP_DURATION,
            wall_seconds,
        }
    }

    pub fn years_per_hour(&self) -> f64 {
        if self.chunks == 0 || self.wall_seconds <= 0.0 {
            return 0.0;
        }
        self.sim_seconds / SECONDS_PER_YEAR / (self.wall_seconds / 3600.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub workers: usize,
    pub years_per_hour: f64,
    /// Relative to the first row.
    pub speedup: f64,
}

pub fn scaling_table(samples: &[Throughput]) -> Vec<ScalingRow> {
    let base = samples.first().map(|s| s.years_per_hour()).unwrap_or(0.0);
    samples
        .iter()
        .map(|s| ScalingRow {
            workers: s.workers,
            years_per_hour: s.years_per_hour(),
            speedup: if base > 0.0 { s.years_per_hour() / base } else { 0.0 },
        })
        .collect()
}

/// Runs `workers` worker threads against one in-process store for
/// `duration` and counts the chunks they produce.
#[allow(clippy::too_many_arguments)]
pub fn measure_workers(
    env_cfg: &EnvConfig,
    blob: &ParameterBlob,
    ppo: &PpoConfig,
    workers: usize,
    envs_per_worker: usize,
    segment_chunks: usize,
    duration: Duration,
    seed: u64,
) -> Result<Throughput> {
    let store = Arc::new(Store::new(usize::MAX));
    store.put_params(blob.to_bytes())?;
    let stop = Arc::new(AtomicBool::new(false));
    let start = Instant::now();
    let handles: Vec<_> = (0..workers)
        .map(|w| {
            let (store, stop, env_cfg) = (store.clone(), stop.clone(), env_cfg.clone());
            let cfg = WorkerConfig::new(w as u32, envs_per_worker, segment_chunks, seed + w as u64, ppo.clone());
            std::thread::spawn(move || -> Result<u64> {
                let mut worker = Worker::new(cfg, env_cfg);
                let mut stores: Vec<Box<dyn StoreHandle>> = vec![Box::new(LocalStore(store))];
                let mut produced = 0;
                while !stop.load(Ordering::SeqCst) {
                    produced += worker.run_epoch(&mut stores)?.chunks as u64;
                }
                Ok(produced)
            })
        })
        .collect();
    std::thread::sleep(duration);
    stop.store(true, Ordering::SeqCst);
    let mut chunks = 0;
    for h in handles {
        chunks += h.join().expect("worker thread panicked")?;
    }
    let wall = start.elapsed().as_secs_f64();
    Ok(Throughput::new(workers, chunks, ppo.chunk_len, wall))
}

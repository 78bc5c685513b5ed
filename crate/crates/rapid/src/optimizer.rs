//! Optimizer: a puller thread drains the stores into a bounded buffer, the
//! learner samples minibatches from each epoch's batch and reduces shard
//! gradients, and the new parameters go out to every store.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use reorient_core::env::NOMINAL_STEP_DURATION;
use reorient_core::ppo::{Chunk, EpochMetrics};
use reorient_core::PpoLearner;

use crate::blob::ParameterBlob;
use crate::store::StoreHandle;
use crate::wire::decode_chunk;
use crate::{RapidError, Result};

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub shards: usize,
    /// How long to wait for a full batch before giving up.
    pub starvation_timeout: Duration,
    /// Chunks requested per POP_EXP.
    pub pull_batch: usize,
    /// Decoded chunks held between puller and learner.
    pub buffer_chunks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            shards: 1,
            starvation_timeout: Duration::from_secs(120),
            pull_batch: 256,
            buffer_chunks: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerEpoch {
    /// Version the batch was trained against.
    pub version: u64,
    pub published: u64,
    pub metrics: EpochMetrics,
    pub chunks: usize,
    /// Largest `version − chunk version` in the batch.
    pub max_staleness: u64,
    /// Per-worker chunk counts, indexed by worker id.
    pub by_worker: Vec<usize>,
    pub sim_seconds: f64,
    pub wall_seconds: f64,
}

pub struct Optimizer {
    pub learner: PpoLearner,
    pub cfg: OptimizerConfig,
    publish_to: Vec<Box<dyn StoreHandle>>,
    rx: Option<Receiver<(u32, Chunk)>>,
    stop: Arc<AtomicBool>,
    corrupt: Arc<AtomicU64>,
    puller: Option<JoinHandle<()>>,
}

fn pull_loop(
    mut stores: Vec<Box<dyn StoreHandle>>,
    tx: SyncSender<(u32, Chunk)>,
    stop: Arc<AtomicBool>,
    corrupt: Arc<AtomicU64>,
    pull_batch: usize,
) {
    while !stop.load(Ordering::SeqCst) {
        let mut got = 0;
        for (i, s) in stores.iter_mut().enumerate() {
            let raw = match s.pop(pull_batch) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("puller: store {i}: {e}");
                    continue;
                }
            };
            got += raw.len();
            for bytes in raw {
                match decode_chunk(&bytes) {
                    Ok(c) => {
                        if tx.send(c).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        corrupt.fetch_add(1, Ordering::SeqCst);
                        log::warn!("puller: dropping undecodable chunk: {e}");
                    }
                }
            }
        }
        if got == 0 {
            std::thread::sleep(Duration::from_millis(2));
        }
    }
}

impl Optimizer {
    /// `pull_from` and `publish_to` are separate handles on the same stores;
    /// the puller thread owns the former.
    pub fn new(
        mut learner: PpoLearner,
        pull_from: Vec<Box<dyn StoreHandle>>,
        publish_to: Vec<Box<dyn StoreHandle>>,
        cfg: OptimizerConfig,
    ) -> Result<Self> {
        if cfg.shards == 0 {
            return Err(RapidError::Protocol("shard count must be at least 1".into()));
        }
        if pull_from.is_empty() || publish_to.is_empty() {
            return Err(RapidError::Unreachable(0));
        }
        learner.shards = cfg.shards;
        let (tx, rx) = sync_channel(cfg.buffer_chunks.max(1));
        let stop = Arc::new(AtomicBool::new(false));
        let corrupt = Arc::new(AtomicU64::new(0));
        let puller = {
            let (stop, corrupt, n) = (stop.clone(), corrupt.clone(), cfg.pull_batch.max(1));
            std::thread::spawn(move || pull_loop(pull_from, tx, stop, corrupt, n))
        };
        Ok(Self {
            learner,
            cfg,
            publish_to,
            rx: Some(rx),
            stop,
            corrupt,
            puller: Some(puller),
        })
    }

    pub fn version(&self) -> u64 {
        self.learner.epochs
    }

    pub fn corrupt_chunks(&self) -> u64 {
        self.corrupt.load(Ordering::SeqCst)
    }

    pub fn blob(&self) -> ParameterBlob {
        ParameterBlob::from_learner(&self.learner)
    }

    /// Sends the current parameters to every store.
    pub fn publish(&mut self) -> Result<u64> {
        let bytes = self.blob().to_bytes();
        for s in &mut self.publish_to {
            s.put_params(&bytes)?;
        }
        Ok(self.version())
    }

    /// Blocks until a full batch is buffered.
    pub fn gather(&mut self) -> Result<Vec<(u32, Chunk)>> {
        let want = self.learner.cfg.batch_chunks;
        let start = Instant::now();
        let mut batch = Vec::with_capacity(want);
        let mut warned = false;
        while batch.len() < want {
            let rx = self.rx.as_ref().expect("receiver lives until drop");
            match rx.recv_timeout(Duration::from_millis(500)) {
                Ok(c) => batch.push(c),
                Err(RecvTimeoutError::Timeout) => {
                    let waited = start.elapsed();
                    if !warned && waited > Duration::from_secs(10) {
                        log::warn!("optimizer starving: {} of {want} chunks after {:.0?}", batch.len(), waited);
                        warned = true;
                    }
                    if waited > self.cfg.starvation_timeout {
                        return Err(RapidError::Starved {
                            got: batch.len(),
                            want,
                            secs: waited.as_secs_f64(),
                        });
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(RapidError::Protocol("puller thread exited".into()));
                }
            }
        }
        Ok(batch)
    }

    /// Gather, train one epoch, publish the next version.
    pub fn step(&mut self) -> Result<OptimizerEpoch> {
        let t0 = Instant::now();
        let batch = self.gather()?;
        let version = self.version();
        let max_staleness = batch.iter().map(|(_, c)| version.saturating_sub(c.version)).max().unwrap_or(0);
        let mut by_worker = Vec::new();
        for (w, _) in &batch {
            let w = *w as usize;
            if by_worker.len() <= w {
                by_worker.resize(w + 1, 0);
            }
            by_worker[w] += 1;
        }
        let chunks: Vec<Chunk> = batch.into_iter().map(|(_, c)| c).collect();
        let transitions: usize = chunks.iter().map(|c| c.len).sum();
        let metrics = self.learner.train_epoch(&chunks)?;
        let published = self.publish()?;
        Ok(OptimizerEpoch {
            version,
            published,
            metrics,
            chunks: chunks.len(),
            max_staleness,
            by_worker,
            sim_seconds: transitions as f64 * NOMINAL_STEP_DURATION,
            wall_seconds: t0.elapsed().as_secs_f64(),
        })
    }
}

impl Drop for Optimizer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // closing the buffer unblocks a puller stuck on a full channel
        self.rx.take();
        if let Some(h) = self.puller.take() {
            let _ = h.join();
        }
    }
}

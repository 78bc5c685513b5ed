//! Training runs. A run directory holds:
//!
//! - `config.toml`: the resolved configuration
//! - `metrics.jsonl`: one [`EpochRecord`] per epoch
//! - `timing.jsonl`: wall-clock per epoch
//! - `checkpoint.bin`: newest parameter blob
//! - `checkpoints/epoch_NNNNN.bin`: periodic blobs

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use reorient_core::ppo::rollout::RolloutStats;
use reorient_core::rng::derive_seed;
use reorient_core::PpoLearner;
use reorient_rapid::optimizer::{Optimizer, OptimizerConfig, OptimizerEpoch};
use reorient_rapid::store::{connect_all, LocalStore, Store, StoreHandle};
use reorient_rapid::worker::{Worker, WorkerConfig};
use reorient_rapid::ParameterBlob;

use crate::config::{ExperimentConfig, RapidMode};
use crate::metrics::{median, EpochRecord, JsonlWriter, TimingRecord};
use crate::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub init_from: Option<PathBuf>,
    /// Remote stores fed by external workers; overrides `rapid.mode`.
    pub stores: Option<String>,
}

pub fn load_blob(path: &Path) -> Result<ParameterBlob> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(ParameterBlob::from_bytes(&bytes)?)
}

/// Fresh networks, or warm-started ones with fresh optimizer moments.
pub fn build_learner(cfg: &ExperimentConfig, init: Option<ParameterBlob>) -> Result<PpoLearner> {
    let (mut policy, mut value) = cfg.nets()?;
    let mut value_stats = None;
    if let Some(b) = init {
        for (what, have, want) in [("policy", &b.policy.config, &policy.config), ("value", &b.value.config, &value.config)] {
            if have != want {
                return Err(CliError::Config(format!(
                    "warm start: checkpoint {what} network is {have:?} but the config builds {want:?}; \
                     locking joints keeps observation sizes, changing num_joints, \
                     policy_object_position or the net section does not"
                )));
            }
        }
        let hash = cfg.hash();
        policy = b.policy;
        value = b.value;
        policy.config_hash = hash;
        value.config_hash = hash;
        policy.version = 0;
        value.version = 0;
        value_stats = Some(b.value_stats);
    }
    let mut learner = PpoLearner::new(policy, value, cfg.ppo.clone(), cfg.seed)?;
    if let Some(s) = value_stats {
        learner.value_stats = s;
    }
    learner.shards = cfg.rapid.shards;
    Ok(learner)
}

fn worker_config(cfg: &ExperimentConfig, id: usize) -> WorkerConfig {
    WorkerConfig::new(
        id as u32,
        cfg.rapid.envs_per_worker,
        cfg.rapid.segment_chunks,
        derive_seed(cfg.seed, 1000 + id as u64),
        cfg.ppo.clone(),
    )
}

fn record(epoch: u64, oe: &OptimizerEpoch, stats: &RolloutStats, sim_total: f64) -> EpochRecord {
    let mut goals: Vec<f64> = stats.goals.iter().map(|&g| g as f64).collect();
    goals.sort_by(f64::total_cmp);
    let m = &oe.metrics;
    EpochRecord {
        epoch,
        version: oe.published,
        chunks: oe.chunks,
        transitions: m.transitions,
        sim_seconds: sim_total,
        episodes: stats.episodes,
        goals_median: median(&goals),
        goals_mean: (!goals.is_empty()).then(|| goals.iter().sum::<f64>() / goals.len() as f64),
        drops: stats.drops,
        timeouts: stats.timeouts,
        reached_max: stats.reached_max,
        reward_per_step: if stats.steps > 0 { stats.reward_sum / stats.steps as f64 } else { 0.0 },
        loss: m.loss,
        policy_loss: m.policy_loss,
        value_loss: m.value_loss,
        entropy: m.entropy,
        approx_kl: m.approx_kl,
        clip_fraction: m.clip_fraction,
        grad_norm: m.grad_norm,
        max_staleness: oe.max_staleness,
    }
}

fn write_blob(path: &Path, blob: &ParameterBlob) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, blob.to_bytes())?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

struct RunFiles {
    dir: PathBuf,
    metrics: JsonlWriter,
    timing: JsonlWriter,
    start: Instant,
    sim_total: f64,
    every: u64,
}

impl RunFiles {
    fn epoch(&mut self, epoch: u64, oe: &OptimizerEpoch, stats: &RolloutStats, workers: usize, blob: impl Fn() -> ParameterBlob) -> Result<()> {
        self.sim_total += oe.sim_seconds;
        let rec = record(epoch, oe, stats, self.sim_total);
        log::info!(
            "epoch {epoch:5} v{} | episodes {:3} median goals {} | reward/step {:+.3} | entropy {:.3} kl {:.4}",
            rec.version,
            rec.episodes,
            rec.goals_median.map_or("-".into(), |g| format!("{g}")),
            rec.reward_per_step,
            rec.entropy,
            rec.approx_kl
        );
        self.metrics.write(&rec)?;
        self.timing.write(&TimingRecord {
            epoch,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            sim_seconds: self.sim_total,
            workers,
        })?;
        if self.every > 0 && (epoch + 1).is_multiple_of(self.every) {
            write_blob(&self.dir.join("checkpoints").join(format!("epoch_{:05}.bin", epoch + 1)), &blob())?;
        }
        Ok(())
    }
}

/// Trains per `cfg` into `dir` and returns the final parameters.
pub fn train(cfg: &ExperimentConfig, dir: &Path, opts: &TrainOptions) -> Result<ParameterBlob> {
    cfg.validate()?;
    let init = opts.init_from.as_deref().map(load_blob).transpose()?;
    let learner = build_learner(cfg, init)?;
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut files = RunFiles {
        dir: dir.to_path_buf(),
        metrics: JsonlWriter::create(&dir.join("metrics.jsonl"))?,
        timing: JsonlWriter::create(&dir.join("timing.jsonl"))?,
        start: Instant::now(),
        sim_total: 0.0,
        every: cfg.train.checkpoint_every,
    };
    let opt_cfg = OptimizerConfig {
        shards: cfg.rapid.shards,
        ..OptimizerConfig::default()
    };
    let env_cfg = cfg.env_config();

    let blob = if let Some(list) = &opts.stores {
        let mut opt = Optimizer::new(learner, connect_all(list)?, connect_all(list)?, opt_cfg)?;
        opt.publish()?;
        for epoch in 0..cfg.train.epochs {
            let oe = opt.step()?;
            files.epoch(epoch, &oe, &RolloutStats::default(), cfg.rapid.workers, || opt.blob())?;
        }
        opt.blob()
    } else {
        match cfg.rapid.mode {
            RapidMode::Local => {
                let store = Arc::new(Store::new(cfg.rapid.store_capacity));
                let handle = || -> Vec<Box<dyn StoreHandle>> { vec![Box::new(LocalStore(store.clone()))] };
                let mut opt = Optimizer::new(learner, handle(), handle(), opt_cfg)?;
                opt.publish()?;
                let mut worker = Worker::new(worker_config(cfg, 0), env_cfg);
                let mut wstores = handle();
                for epoch in 0..cfg.train.epochs {
                    let we = worker.run_epoch(&mut wstores)?;
                    let oe = opt.step()?;
                    files.epoch(epoch, &oe, &we.stats, 1, || opt.blob())?;
                }
                opt.blob()
            }
            RapidMode::Threads => train_threads(cfg, learner, opt_cfg, &mut files)?,
        }
    };
    write_blob(&dir.join("checkpoint.bin"), &blob)?;
    Ok(blob)
}

fn train_threads(cfg: &ExperimentConfig, learner: PpoLearner, opt_cfg: OptimizerConfig, files: &mut RunFiles) -> Result<ParameterBlob> {
    let stores: Vec<Arc<Store>> = (0..cfg.rapid.stores).map(|_| Arc::new(Store::new(cfg.rapid.store_capacity))).collect();
    let handles = || -> Vec<Box<dyn StoreHandle>> {
        stores.iter().map(|s| Box::new(LocalStore(s.clone())) as Box<dyn StoreHandle>).collect()
    };
    let mut opt = Optimizer::new(learner, handles(), handles(), opt_cfg)?;
    opt.publish()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<RolloutStats>();
    let workers: Vec<_> = (0..cfg.rapid.workers)
        .map(|i| {
            let (stop, tx, env_cfg) = (stop.clone(), tx.clone(), cfg.env_config());
            let mut worker = Worker::new(worker_config(cfg, i), env_cfg);
            let mut ws = handles();
            std::thread::spawn(move || -> reorient_rapid::Result<()> {
                let mut last = None;
                while !stop.load(Ordering::SeqCst) {
                    worker.refresh(&mut ws)?;
                    if worker.version() == last {
                        std::thread::sleep(Duration::from_millis(2));
                        continue;
                    }
                    last = worker.version();
                    let (chunks, stats) = worker.collect()?;
                    worker.push(&mut ws, &chunks)?;
                    let _ = tx.send(stats);
                }
                Ok(())
            })
        })
        .collect();
    drop(tx);
    let mut result = Ok(());
    for epoch in 0..cfg.train.epochs {
        match opt.step() {
            Ok(oe) => {
                let mut stats = RolloutStats::default();
                while let Ok(s) = rx.try_recv() {
                    stats.merge(&s);
                }
                if let Err(e) = files.epoch(epoch, &oe, &stats, cfg.rapid.workers, || opt.blob()) {
                    result = Err(e);
                    break;
                }
            }
            Err(e) => {
                result = Err(e.into());
                break;
            }
        }
    }
    stop.store(true, Ordering::SeqCst);
    for w in workers {
        if let Ok(Err(e)) = w.join() {
            log::warn!("worker ended with {e}");
        }
    }
    result.map(|_| opt.blob())
}

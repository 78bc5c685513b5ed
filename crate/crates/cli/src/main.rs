use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use reorient_cli::ablate::{self, parse_arch, parse_holdout};
use reorient_cli::config::{EvalAction, ExperimentConfig};
use reorient_cli::evaluate::{evaluate, format_tables};
use reorient_cli::metrics::write_json;
use reorient_cli::train::{load_blob, train, TrainOptions};
use reorient_cli::{calibrate, probe, report, CliError, Result};
use reorient_core::randomization::Holdout;
use reorient_rapid::store::{connect_all, StoreServer};
use reorient_rapid::worker::{worker_loop, Worker, WorkerConfig};

#[derive(Parser)]
#[command(name = "reorient", version, about = "Train and evaluate in-hand reorientation policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalEnv {
    /// The training distribution described by the config.
    Train,
    /// Fixed hidden physics with every unmodeled effect.
    RealAnalog,
    /// No randomizations at all.
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    Holdout,
    Architecture,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Warm start from a checkpoint (weights and normalizers).
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Remote stores (host:port,...) fed by external workers.
        #[arg(long)]
        stores: Option<String>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Consecutive-goal trials with a trained policy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to config.toml next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalEnv::Train)]
        env: EvalEnv,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// Evaluate even if the checkpoint was trained under another config.
        #[arg(long)]
        force: bool,
        /// Write the trial table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one policy per arm and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = AblationKind::Holdout)]
        kind: AblationKind,
        /// Holdout arms (none, obs-noise, physics, unmodeled, all) or
        /// architectures (lstm-lstm, ff-lstm, ff-ff), comma separated.
        #[arg(long)]
        arms: Option<String>,
        /// Skip training for arms whose run directory is already finished.
        #[arg(long)]
        reuse: bool,
    },
    /// Linear probe of the policy's recurrent state.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for probe.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit joint parameters to a recording, or synthesize one.
    Calibrate {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Calibrated (or, with --synthesize, hidden) parameters as TOML.
        #[arg(long)]
        out: PathBuf,
        /// Record the probe on the physics draw with this seed instead.
        #[arg(long)]
        synthesize: Option<u64>,
    },
    /// Run an experience/parameter store.
    ServeStore {
        #[arg(long, default_value_t = 7070)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = reorient_rapid::store::DEFAULT_CAPACITY)]
        capacity: usize,
    },
    /// Roll out the newest parameters and push experience to stores.
    Worker {
        #[arg(long)]
        stores: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        id: u32,
        #[arg(long)]
        max_epochs: Option<u64>,
    },
    /// Print every table a run directory can regenerate.
    Report {
        dir: PathBuf,
        /// Print every n-th epoch of the learning curve.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Measure throughput for these worker counts first (e.g. 1,2).
        #[arg(long)]
        scaling: Option<String>,
        #[arg(long, default_value_t = 20.0)]
        seconds: f64,
    },
}

fn config_beside(checkpoint: &Path, explicit: Option<PathBuf>) -> Result<ExperimentConfig> {
    let path = explicit.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("config.toml"));
    ExperimentConfig::load(&path)
}

fn list<T>(s: &str, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| parse(x.trim()).ok_or_else(|| CliError::Config(format!("unknown {what} '{x}'"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, out, init_from, stores, epochs, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            train(&cfg, &out, &TrainOptions { init_from, stores })?;
            println!("{}", report::render(&out, 10)?);
        }
        Cmd::Evaluate { checkpoint, config, env, trials, seed, greedy, force, out } => {
            let cfg = config_beside(&checkpoint, config)?;
            let blob = load_blob(&checkpoint)?;
            if blob.policy.config_hash != cfg.hash() {
                let msg = format!(
                    "checkpoint was trained under config hash {:016x}, this config hashes to {:016x}",
                    blob.policy.config_hash,
                    cfg.hash()
                );
                if !force {
                    return Err(CliError::Config(format!("{msg}; pass --force to evaluate anyway")));
                }
                log::warn!("{msg}");
            }
            let (label, env_cfg) = match env {
                EvalEnv::Train => ("Training distribution".to_string(), cfg.env_config()),
                EvalEnv::RealAnalog => (format!("Real analog (seed {})", cfg.eval.real_analog_seed), cfg.real_analog_env()),
                EvalEnv::None => ("No randomizations".to_string(), cfg.with_holdout(Holdout::All).env_config()),
            };
            let action = if greedy { EvalAction::Greedy } else { cfg.eval.action };
            let (table, wall) = evaluate(&label, &blob.policy, &env_cfg, trials.unwrap_or(cfg.eval.n_trials), seed.unwrap_or(cfg.eval.seed), action)?;
            print!("{}", format_tables("Environment", std::slice::from_ref(&table)));
            log::info!("{} trials in {wall:.1} s", table.trials.len());
            if let Some(p) = out {
                write_json(&p, &table)?;
            }
        }
        Cmd::Ablate { config, out, kind, arms, reuse } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            std::fs::create_dir_all(&out)?;
            let report = match kind {
                AblationKind::Holdout => {
                    if let Some(a) = arms {
                        cfg.ablation.arms = list(&a, parse_holdout, "holdout")?;
                    }
                    ablate::ablate_holdouts(&cfg, &out, reuse)?
                }
                AblationKind::Architecture => {
                    let archs = list(arms.as_deref().unwrap_or("lstm-lstm,ff-ff"), parse_arch, "architecture")?;
                    ablate::ablate_architectures(&cfg, &archs, &out, reuse)?
                }
            };
            print!("{}", report.table());
            if report.arms.iter().all(|a| a.error.is_some()) && !report.arms.is_empty() {
                return Err(CliError::Runtime(anyhow::anyhow!("every arm failed")));
            }
        }
        Cmd::Probe { checkpoint, config, episodes, seed, out } => {
            let mut cfg = config_beside(&checkpoint, config)?;
            if let Some(e) = episodes {
                cfg.probe.episodes = e;
            }
            let blob = load_blob(&checkpoint)?;
            let r = probe::probe(&blob.policy, &cfg.env_config(), &cfg.probe, seed)?;
            print!("{}", probe::format_report(&r));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_json(&dir.join("probe.json"), &r)?;
            }
        }
        Cmd::Calibrate { recording, config, out, synthesize } => {
            let cfg = ExperimentConfig::load(&config)?;
            let params = if let Some(seed) = synthesize {
                let (hidden, traj) = calibrate::synthesize(&cfg, seed)?;
                calibrate::write_recording(&recording, &traj)?;
                println!("recorded {:.1} s ({} steps) to {}", traj.duration(), traj.steps(), recording.display());
                hidden
            } else {
                let traj = calibrate::read_recording(&recording)?;
                let r = calibrate::calibrate(&cfg, &traj)?;
                print!("{}", calibrate::format_result(&r));
                r.params
            };
            std::fs::write(&out, toml::to_string(&params).map_err(anyhow::Error::from)?)?;
        }
        Cmd::ServeStore { port, host, capacity } => {
            let server = StoreServer::bind((host.as_str(), port), capacity)?;
            log::info!("store listening on {}", server.addr());
            println!("{}", server.addr());
            server.join();
        }
        Cmd::Worker { stores, seed, config, id, max_epochs } => {
            let cfg = ExperimentConfig::load(&config)?;
            let wc = WorkerConfig::new(id, cfg.rapid.envs_per_worker, cfg.rapid.segment_chunks, seed, cfg.ppo.clone());
            let mut worker = Worker::new(wc, cfg.env_config());
            let mut handles = connect_all(&stores)?;
            let stop = AtomicBool::new(false);
            let done = worker_loop(&mut worker, &mut handles, &stop, max_epochs)?;
            log::info!("worker {id}: {} epochs", done.len());
        }
        Cmd::Report { dir, stride, scaling, seconds } => {
            if let Some(s) = scaling {
                let counts = list(&s, |x| x.parse().ok().filter(|&n: &usize| n > 0), "worker count")?;
                let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
                let blob = load_blob(&dir.join("checkpoint.bin"))?;
                report::measure_scaling(&cfg, &blob, &counts, Duration::from_secs_f64(seconds), &dir)?;
            }
            print!("{}", report::render(&dir, stride)?);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

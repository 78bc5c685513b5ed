//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 4 to 7 evaluate the trained run directories under `runs/`
//! (produced by `scripts/train_runs.sh`). They and the throughput ratio are
//! reported but do not fail the target; every other criterion does.

#[path = "../../core/tests/support/mod.rs"]
mod support;

#[path = "../../rapid/tests/common/mod.rs"]
mod rapid_common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, RngCore};
use reorient_cli::config::ExperimentConfig;
use reorient_cli::evaluate::{evaluate, TrialTable};
use reorient_cli::probe::probe;
use reorient_cli::train::{load_blob, train, TrainOptions};
use reorient_core::calibration::{coordinate_descent, get_param, ProbeConfig};
use reorient_core::env::{EnvConfig, EnvParams};
use reorient_core::nets::{Core, NetConfig, Network, RunningNormalizer};
use reorient_core::ppo::rollout::Rollout;
use reorient_core::ppo::{compute_gae, normalize_advantages, ppo_surrogate, sharded_gradient, Chunk, PpoConfig};
use reorient_core::randomization::{Holdout, RandomizationConfig};
use reorient_core::rng::seeded;
use reorient_core::EnvRollout;
use reorient_rapid::store::{StoreClient, StoreHandle, StoreServer};
use reorient_rapid::throughput::measure_workers;
use reorient_rapid::wire::{self, encode_chunk, Frame};
use reorient_rapid::worker::Worker;
use reorient_rapid::ParameterBlob;

struct Line {
    id: &'static str,
    pass: bool,
    /// Failing it fails the target.
    hard: bool,
    detail: String,
}

fn runs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).ancestors().nth(2).unwrap().join("runs")
}

/// Runs a check that reports through panics.
fn passes(f: impl FnOnce()) -> Result<(), String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(panic_message)
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn within_budget(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.1} s (limit {} s)", t.as_secs_f64(), limit.as_secs()))
}

fn c1_math_oracles() -> Line {
    let start = Instant::now();
    let mut rng = seeded(1, 1);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for instance in 0..100 {
        let t_len = rng.random_range(1..=32);
        let rewards: Vec<f64> = (0..t_len).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let values: Vec<f64> = (0..=t_len).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let dones: Vec<bool> = (0..t_len).map(|_| rng.random_bool(0.1)).collect();
        let gamma = [0.998, 0.9, 1.0][instance % 3];
        for lambda in [0.0, 0.3, 0.7, 0.95] {
            let (adv, _) = compute_gae(&rewards, &values, &dones, gamma, lambda);
            let want = support::gae_brute_force(&rewards, &values, &dones, gamma, lambda);
            worst = adv.iter().zip(&want).fold(worst, |w, (a, b)| w.max((a - b).abs()));
            cases += 1;
        }
    }
    let gae_ok = worst < 1e-10;
    let surrogate = [
        ppo_surrogate(1.0, 0.37, 0.2) == 0.37,
        ppo_surrogate(2.0, 1.0, 0.2) == 1.2,
        ppo_surrogate(0.5, -1.0, 0.2) == -0.8,
    ];
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let backlash_ok = passes(support::samplers::backlash_forced_cases).is_ok();
    std::panic::set_hook(hook);
    let n = RunningNormalizer {
        count: 100.0,
        mean: vec![2.0],
        var: vec![4.0],
    };
    let clip_ok = n.apply_one(0, 2.0 + 7.0 * 2.0) == 5.0 && n.apply_one(0, 2.0 - 7.0 * 2.0) == -5.0 && n.apply_one(0, 2.0 + 4.0 * 2.0) == 4.0;
    let (fast, t) = within_budget(start, Duration::from_secs(60));
    let count = |xs: &[bool]| xs.iter().filter(|&&x| x).count();
    Line {
        id: "1",
        pass: gae_ok && count(&surrogate) == 3 && backlash_ok && clip_ok && fast,
        hard: true,
        detail: format!(
            "GAE max |err| {worst:.1e} over {cases} cases; surrogate {}/3 exact; backlash forced cases {}; clip at ±5σ {}; {t}",
            count(&surrogate),
            if backlash_ok { "exact" } else { "wrong" },
            if clip_ok { "exact" } else { "wrong" }
        ),
    }
}

fn c2_gradients() -> Line {
    let start = Instant::now();
    let cfg = PpoConfig::default();
    let worst = (0..20).map(|seed| support::gradient_check(Core::Lstm, seed, &cfg)).fold(0.0, f64::max);
    let (fast, t) = within_budget(start, Duration::from_secs(300));
    Line {
        id: "2",
        pass: worst < 1e-4 && fast,
        hard: true,
        detail: format!("max relative error {worst:.2e} over 20 seeds (H 8, M 4, K 2, T 5); {t}"),
    }
}

fn c3_distributions() -> Line {
    use support::samplers::*;
    let start = Instant::now();
    let checks: [(&str, fn()); 12] = [
        ("physics ranges", physics_ranges_match_their_distributions),
        ("timing mean 1/λ", timing_mean_matches_inverse_rate),
        ("action noise std", action_noise_std_at_zero_action),
        ("delay rate 0.5", delay_flag_rate_is_half),
        ("marker freeze 0.2/s", marker_freeze_entry_rate),
        ("force decay 0.99", force_decays_by_099_per_nominal_step),
        ("force stationary std", force_stationary_std_matches_impulse_decay_balance),
        ("force probability", force_probability_in_support),
        ("backlash deltas", backlash_params_centered_and_floored),
        ("observation noise, one episode", observation_noise_within_one_episode),
        ("observation noise, across episodes", observation_noise_across_episodes),
        ("orientation noise angle", orientation_noise_angle_std),
    ];
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(name, f)| passes(f).err().map(|e| format!("{name}: {e}")))
        .collect();
    std::panic::set_hook(hook);
    let (fast, t) = within_budget(start, Duration::from_secs(300));
    Line {
        id: "3",
        pass: failed.is_empty() && fast,
        hard: true,
        detail: if failed.is_empty() {
            format!("{} samplers within 3 Monte-Carlo σ; {t}", checks.len())
        } else {
            failed.join("; ")
        },
    }
}

fn load_run(dir: &Path) -> Result<(ExperimentConfig, ParameterBlob), String> {
    let cfg = ExperimentConfig::load(&dir.join("config.toml")).map_err(|e| format!("{}: {e}", dir.display()))?;
    let blob = load_blob(&dir.join("checkpoint.bin")).map_err(|e| format!("{}: {e}", dir.display()))?;
    Ok((cfg, blob))
}

fn eval(cfg: &ExperimentConfig, policy: &reorient_core::Net, env: &EnvConfig, trials: usize, label: &str) -> Result<TrialTable, String> {
    evaluate(label, policy, env, trials, cfg.eval.seed, cfg.eval.action)
        .map(|(t, _)| t)
        .map_err(|e| e.to_string())
}

fn soft(id: &'static str, r: Result<(bool, String), String>) -> Line {
    match r {
        Ok((pass, detail)) => Line { id, pass, hard: false, detail },
        Err(e) => Line {
            id,
            pass: false,
            hard: false,
            detail: format!("not evaluated: {e}"),
        },
    }
}

fn c4_no_randomization() -> Line {
    soft("4", (|| {
        let (cfg, blob) = load_run(&runs_dir().join("holdout/all"))?;
        let t = eval(&cfg, &blob.policy, &cfg.env_config(), 100, "no randomizations")?;
        let m = t.median().unwrap_or(0.0);
        Ok((m >= 45.0, format!("median {m} over 100 trials (need ≥ 45); {} epochs", blob.version)))
    })())
}

fn c5_holdouts() -> Line {
    soft("5", (|| {
        let base = load_run(&runs_dir().join("holdout/none"))?.0;
        let env = base.real_analog_env();
        let mut med = Vec::new();
        for h in [Holdout::None, Holdout::Unmodeled, Holdout::Physics, Holdout::All] {
            let (cfg, blob) = load_run(&runs_dir().join("holdout").join(h.as_str()))?;
            let t = eval(&cfg, &blob.policy, &env, 20, h.describe())?;
            med.push(t.median().unwrap_or(0.0));
        }
        let (all, no_unmod, no_phys, none) = (med[0], med[1], med[2], med[3]);
        let pass = all > no_unmod && no_unmod >= no_phys && med.iter().all(|&m| none <= m) && all >= 2.0 * none + 1.0;
        Ok((
            pass,
            format!("real-analog medians over 20 trials: all {all}, no unmodeled {no_unmod}, no physics {no_phys}, none {none}"),
        ))
    })())
}

/// First checkpoint epoch whose median over `trials` reaches `threshold`.
fn epochs_to_threshold(dir: &Path, trials: usize, threshold: f64) -> Result<Option<u64>, String> {
    let cfg = load_run(dir)?.0;
    let mut ckpts: Vec<(u64, PathBuf)> = std::fs::read_dir(dir.join("checkpoints"))
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| {
            let p = e.ok()?.path();
            let n = p.file_stem()?.to_str()?.strip_prefix("epoch_")?.parse().ok()?;
            Some((n, p))
        })
        .collect();
    ckpts.sort();
    for (epoch, p) in ckpts {
        let blob = load_blob(&p).map_err(|e| e.to_string())?;
        let t = eval(&cfg, &blob.policy, &cfg.env_config(), trials, "")?;
        if t.median().unwrap_or(0.0) >= threshold {
            return Ok(Some(epoch));
        }
    }
    Ok(None)
}

fn c6_memory() -> Line {
    soft("6", (|| {
        let (lcfg, lstm) = load_run(&runs_dir().join("holdout/none"))?;
        let (fcfg, ff) = load_run(&runs_dir().join("arch-randomized/ff-ff"))?;
        let env = lcfg.env_config();
        let ml = eval(&lcfg, &lstm.policy, &env, 20, "lstm")?.median().unwrap_or(0.0);
        let mf = eval(&fcfg, &ff.policy, &env, 20, "ff")?.median().unwrap_or(0.0);
        let el = epochs_to_threshold(&runs_dir().join("holdout/all"), 20, 45.0)?;
        let ef = epochs_to_threshold(&runs_dir().join("arch-norand/ff-ff"), 20, 45.0)?;
        let ratio = match (el, ef) {
            (Some(a), Some(b)) => Some(a.max(b) as f64 / a.min(b).max(1) as f64),
            _ => None,
        };
        let show = |e: Option<u64>| e.map_or("never".to_string(), |e| e.to_string());
        Ok((
            ml > mf && ratio.is_some_and(|r| r <= 1.5),
            format!(
                "randomized medians LSTM {ml} vs FF {mf}; epochs to median ≥ 45 without randomization: LSTM {}, FF {} (ratio {})",
                show(el),
                show(ef),
                ratio.map_or("-".into(), |r| format!("{r:.2}"))
            ),
        ))
    })())
}

fn c7_probe() -> Line {
    soft("7", (|| {
        let (cfg, blob) = load_run(&runs_dir().join("holdout/none"))?;
        let r = probe(&blob.policy, &cfg.env_config(), &cfg.probe, 0).map_err(|e| e.to_string())?;
        Ok((
            r.state_accuracy > 0.65 && (r.shuffled_accuracy - 0.5).abs() <= 0.05,
            format!(
                "held-out accuracy {:.3} (need > 0.65), shuffled {:.3} (need 0.5 ± 0.05), raw obs {:.3}; {} samples",
                r.state_accuracy, r.shuffled_accuracy, r.raw_obs_accuracy, r.samples
            ),
        ))
    })())
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

fn c8a_shards() -> Line {
    let cfg = EnvConfig::new(EnvParams::default(), RandomizationConfig::default());
    let mut rng = seeded(6, 0);
    let p = Network::<f64>::init(NetConfig::policy(cfg.policy_obs_dim(), 3, 16, 8, Core::Lstm), &mut rng).unwrap();
    let v = Network::<f64>::init(NetConfig::value(cfg.value_obs_dim(), 16, 8, Core::Lstm), &mut rng).unwrap();
    let ppo = PpoConfig {
        batch_chunks: 16,
        minibatch_chunks: 16,
        ..Default::default()
    };
    let stats = RunningNormalizer::new(1);
    let mut ro = Rollout::new(&cfg, 8, 6, &p, &v).unwrap();
    let (chunks, _) = ro.collect(&p, &v, &stats, 2, &ppo).unwrap();
    let refs: Vec<&Chunk> = chunks.iter().collect();
    let raw: Vec<f64> = refs.iter().flat_map(|c| c.advantages.iter().map(|&x| x as f64)).collect();
    let adv = normalize_advantages(&raw);
    let (p1, v1, _) = sharded_gradient(&p, &v, &stats, &refs, &adv, &ppo, 1).unwrap();
    let (p2, v2, _) = sharded_gradient(&p, &v, &stats, &refs, &adv, &ppo, 2).unwrap();
    let r = rel_diff(&p2, &p1).max(rel_diff(&v2, &v1));
    Line {
        id: "8a",
        pass: r < 1e-6,
        hard: true,
        detail: format!("2-shard vs 1-shard gradient relative difference {r:.1e} over {} transitions", raw.len()),
    }
}

fn c8b_transport() -> Line {
    let l = rapid_common::learner(1);
    let blob = ParameterBlob::from_learner(&l);
    let env = rapid_common::env_cfg();
    let mut direct = EnvRollout::new(&env, rapid_common::ENVS, 77, &blob.policy, &blob.value).unwrap();
    let mut expected = Vec::new();
    for _ in 0..3 {
        let (chunks, _) = direct.collect(&blob.policy, &blob.value, &blob.value_stats, rapid_common::SEGMENT, &l.cfg).unwrap();
        expected.extend(chunks.iter().map(|c| encode_chunk(0, c)));
    }
    let server = StoreServer::bind("127.0.0.1:0", 10_000).unwrap();
    server.store.put_params(blob.to_bytes()).unwrap();
    let mut stores: Vec<Box<dyn StoreHandle>> = vec![Box::new(StoreClient::connect(server.addr()).unwrap())];
    let mut drain = StoreClient::connect(server.addr()).unwrap();
    let mut w = Worker::new(rapid_common::worker_cfg(0, 77), env);
    let mut got = Vec::new();
    for _ in 0..3 {
        w.run_epoch(&mut stores).unwrap();
        got.extend(drain.pop(usize::MAX >> 1).unwrap());
    }
    let same = got == expected;
    Line {
        id: "8b",
        pass: same,
        hard: true,
        detail: format!(
            "{} chunks over TCP {} the direct rollout",
            got.len(),
            if same { "byte-identical to" } else { "differ from" }
        ),
    }
}

fn c8c_throughput() -> Line {
    let l = rapid_common::learner(2);
    let blob = ParameterBlob::from_learner(&l);
    let env = rapid_common::env_cfg();
    let measure = |w| measure_workers(&env, &blob, &l.cfg, w, 8, 2, Duration::from_secs(4), 3).unwrap();
    let (one, two) = (measure(1), measure(2));
    let ratio = two.years_per_hour() / one.years_per_hour();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    Line {
        id: "8c",
        pass: ratio >= 1.7,
        hard: false,
        detail: format!(
            "2 workers / 1 worker throughput {ratio:.2} (need ≥ 1.7) on {cores} available core(s); {:.4} vs {:.4} years/hour",
            two.years_per_hour(),
            one.years_per_hour()
        ),
    }
}

fn c8d_fuzz() -> Line {
    let server = StoreServer::bind("127.0.0.1:0", 50).unwrap();
    let mut rng = seeded(11, 0);
    let mut good = StoreClient::connect(server.addr()).unwrap();
    let frames = 10_000;
    let mut alive = true;
    for i in 0..frames {
        let mut bytes = Vec::new();
        match rng.random_range(0..4) {
            0 => {
                let mut junk = vec![0u8; rng.random_range(0..64)];
                rng.fill_bytes(&mut junk);
                bytes = junk;
            }
            1 => {
                let verbs = [wire::PING, wire::PUT_PARAMS, wire::GET_PARAMS, wire::PUSH_EXP, wire::POP_EXP];
                let mut p = vec![0u8; rng.random_range(0..40)];
                rng.fill_bytes(&mut p);
                bytes.extend_from_slice(&Frame::new(verbs[rng.random_range(0..5)], p).to_bytes());
            }
            2 => {
                let mut f = Frame::new(rng.random(), vec![1; 8]).to_bytes();
                f.truncate(rng.random_range(1..f.len()));
                bytes = f;
            }
            _ => bytes.extend_from_slice(&rng.random::<u32>().to_le_bytes()),
        }
        let Ok(mut s) = TcpStream::connect(server.addr()) else {
            alive = false;
            break;
        };
        let _ = s.set_read_timeout(Some(Duration::from_secs(10)));
        let _ = s.write_all(&bytes);
        let _ = s.shutdown(std::net::Shutdown::Write);
        let _ = s.read_to_end(&mut Vec::new());
        if i % 1000 == 0 && good.ping().is_err() {
            alive = false;
            break;
        }
    }
    alive &= good.ping().is_ok();
    let c = server.store.counters();
    let balanced = c.pushes == c.pops + c.drops + c.queued;
    Line {
        id: "8d",
        pass: alive && balanced,
        hard: true,
        detail: format!(
            "{frames} random frames: store {}, pushes = pops + drops + queued {}",
            if alive { "kept serving" } else { "stopped serving" },
            if balanced { "holds" } else { "violated" }
        ),
    }
}

fn c9_calibration() -> Line {
    use support::calibration::{five_parameter_start, problem, record, rel, FIVE};
    let start = Instant::now();
    let truth = EnvParams::default();
    let tr = record(&truth, &ProbeConfig::default());
    let at_truth = coordinate_descent(&problem(&truth, &[]), &tr).unwrap();
    let res = coordinate_descent(&problem(&five_parameter_start(&truth), &FIVE), &tr).unwrap();
    let reduction = 1.0 - res.final_error / res.initial_error;
    let worst = FIVE
        .iter()
        .map(|n| rel(get_param(&res.params, n).unwrap(), get_param(&truth, n).unwrap()))
        .fold(0.0, f64::max);
    let (fast, t) = within_budget(start, Duration::from_secs(900));
    Line {
        id: "9",
        pass: reduction >= 0.9 && worst < 0.1 && at_truth.accepted.is_empty() && fast,
        hard: true,
        detail: format!(
            "error reduced {:.2}% (need ≥ 90%), worst parameter error {:.2}% (need < 10%), {} changes accepted from truth; {t}",
            100.0 * reduction,
            100.0 * worst,
            at_truth.accepted.len()
        ),
    }
}

fn c10_determinism() -> Line {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 21;
    cfg.net.hidden = 16;
    cfg.net.memory = 8;
    cfg.rapid.envs_per_worker = 4;
    cfg.rapid.segment_chunks = 2;
    cfg.ppo.batch_chunks = 8;
    cfg.ppo.minibatch_chunks = 4;
    cfg.ppo.minibatches_per_epoch = 4;
    cfg.train.epochs = 3;
    cfg.train.checkpoint_every = 1;
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let blob = train(&cfg, &out, &TrainOptions::default()).unwrap();
        let (table, _) = evaluate("", &blob.policy, &cfg.real_analog_env(), 5, 1, cfg.eval.action).unwrap();
        (out, table)
    };
    let (a, ta) = run("a");
    let (b, tb) = run("b");
    let files = ["metrics.jsonl", "checkpoint.bin", "checkpoints/epoch_00001.bin", "checkpoints/epoch_00002.bin"];
    let same_files = files.iter().all(|f| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok());
    let pass = same_files && ta == tb;
    Line {
        id: "10",
        pass,
        hard: true,
        detail: format!(
            "two seeded runs: metrics and checkpoints {}, evaluation tables {}",
            if same_files { "byte-identical" } else { "differ" },
            if ta == tb { "identical" } else { "differ" }
        ),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let filter: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Line); 13] = [
        ("1", c1_math_oracles),
        ("2", c2_gradients),
        ("3", c3_distributions),
        ("4", c4_no_randomization),
        ("5", c5_holdouts),
        ("6", c6_memory),
        ("7", c7_probe),
        ("8a", c8a_shards),
        ("8b", c8b_transport),
        ("8c", c8c_throughput),
        ("8d", c8d_fuzz),
        ("9", c9_calibration),
        ("10", c10_determinism),
    ];
    let mut hard_failures = 0;
    println!("\nacceptance criteria");
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x.as_str() == id) {
            continue;
        }
        let line = catch_unwind(f).unwrap_or_else(|e| Line {
            id,
            pass: false,
            hard: true,
            detail: format!("panicked: {}", panic_message(e)),
        });
        let tag = match (line.pass, line.hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (measured; not gating)",
        };
        println!("criterion {:<3} {tag}: {}", line.id, line.detail);
        if !line.pass && line.hard {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} gating criteria failed");
        std::process::exit(1);
    }
}

#![allow(dead_code)]

pub mod calibration;
pub mod samplers;

use rand::Rng;
use reorient_core::env::NUM_BINS;
use reorient_core::nets::{Core, NetConfig, Network};
use reorient_core::nets::RunningNormalizer;
use reorient_core::ppo::{minibatch_loss, normalize_advantages, Chunk, PpoConfig};
use reorient_core::rng::seeded;

/// Random chunk for a tiny net. One episode boundary inside, non-zero initial
/// recurrent state, behaviour log-probs near the current policy's.
pub fn synthetic_chunk(policy: &Network<f64>, value: &Network<f64>, t_len: usize, seed: u64) -> Chunk {
    let mut rng = seeded(seed, 77);
    let pd = policy.config.input_dim;
    let vd = value.config.input_dim;
    let k = policy.config.outputs / NUM_BINS;
    let m = policy.config.memory;
    let lstm = policy.config.core == Core::Lstm;
    let mut r = |n: usize, s: f64| -> Vec<f32> { (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) as f32 * s as f32).collect() };
    let policy_obs = r(t_len * pd, 2.0);
    let value_obs = r(t_len * vd, 2.0);
    let h0 = if lstm { r(m, 0.5) } else { vec![] };
    let c0 = if lstm { r(m, 0.5) } else { vec![] };
    let vh0 = if value.config.core == Core::Lstm { r(value.config.memory, 0.5) } else { vec![] };
    let vc0 = if value.config.core == Core::Lstm { r(value.config.memory, 0.5) } else { vec![] };
    let advantages = r(t_len, 1.5);
    let value_targets = r(t_len, 3.0);
    let noise = r(t_len, 0.3);
    let mut rng = seeded(seed, 78);
    let bins: Vec<u8> = (0..t_len * k).map(|_| rng.random_range(0..NUM_BINS as u8)).collect();
    let mut dones = vec![false; t_len];
    if t_len > 3 {
        dones[2] = true;
    }
    let mut chunk = Chunk {
        len: t_len,
        policy_dim: pd,
        value_dim: vd,
        joints: k,
        policy_obs,
        value_obs,
        bins,
        logp: vec![0.0; t_len],
        rewards: vec![0.0; t_len],
        values: vec![0.0; t_len],
        dones,
        advantages,
        value_targets,
        policy_h0: h0,
        policy_c0: c0,
        value_h0: vh0,
        value_c0: vc0,
        version: 0,
    };
    // behaviour log-probs: current ones perturbed, so some ratios clip
    let st = reorient_core::nets::RecurrentState {
        h: chunk.policy_h0.iter().map(|&v| v as f64).collect(),
        c: chunk.policy_c0.iter().map(|&v| v as f64).collect(),
    };
    let cache = policy.forward_seq(&chunk.policy_obs_f64(), &st, &chunk.resets()).unwrap();
    for t in 0..t_len {
        let logits = &cache.out[t * policy.config.outputs..(t + 1) * policy.config.outputs];
        let lp = reorient_core::nets::categorical::log_prob(logits, &chunk.bins_at(t));
        chunk.logp[t] = (lp + noise[t] as f64) as f32;
    }
    chunk
}

/// Tiny networks with non-trivial weights and normalizer statistics.
pub fn tiny_nets(core: Core, seed: u64) -> (Network<f64>, Network<f64>) {
    let (h, m, k) = (8, 4, 2);
    let mut rng = seeded(seed, 3);
    let mut p = Network::<f64>::init(NetConfig::policy(6, k, h, m, core), &mut rng).unwrap();
    let mut v = Network::<f64>::init(NetConfig::value(9, h, m, core), &mut rng).unwrap();
    // scale up the heads so the loss is not flat in them
    for net in [&mut p, &mut v] {
        let specs = net.tensors();
        for s in specs {
            if s.name.starts_with("head") {
                for x in &mut net.params[s.range.clone()] {
                    *x = rng.random::<f64>() - 0.5;
                }
            }
            if s.name.ends_with(".b") {
                for x in &mut net.params[s.range.clone()] {
                    *x += 0.2 * (rng.random::<f64>() - 0.5);
                }
            }
        }
        let d = net.config.input_dim;
        net.normalizer.mean = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        net.normalizer.var = (0..d).map(|_| 0.5 + rng.random::<f64>()).collect();
        net.normalizer.count = 10.0;
    }
    (p, v)
}

/// Mixture of k-step returns evaluated straight from its definition.
/// Horizons past the data (or past a terminal) reuse the longest estimator,
/// which receives the remaining weight λ^(n−1).
pub fn gae_brute_force(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t| {
            let n = t_len - t;
            let k_step = |k: usize| {
                let mut ret = 0.0;
                for i in 0..k {
                    ret += gamma.powi(i as i32) * rewards[t + i];
                    if dones[t + i] {
                        return ret;
                    }
                }
                ret + gamma.powi(k as i32) * values[t + k]
            };
            let mut mix = 0.0;
            for k in 1..n {
                mix += (1.0 - lambda) * lambda.powi(k as i32 - 1) * k_step(k);
            }
            mix += lambda.powi(n as i32 - 1) * k_step(n);
            mix - values[t]
        })
        .collect()
}

fn loss_of(p: &Network<f64>, v: &Network<f64>, stats: &RunningNormalizer, chunks: &[&Chunk], adv: &[f64], cfg: &PpoConfig) -> f64 {
    minibatch_loss(p, v, stats, chunks, adv, cfg, None).unwrap().loss
}

/// Central differences over every parameter of both networks.
pub fn gradient_check(core: Core, seed: u64, cfg: &PpoConfig) -> f64 {
    let (p, v) = tiny_nets(core, seed);
    let chunks = [synthetic_chunk(&p, &v, 5, seed), synthetic_chunk(&p, &v, 5, seed + 1000)];
    let refs: Vec<&Chunk> = chunks.iter().collect();
    let raw: Vec<f64> = chunks.iter().flat_map(|c| c.advantages.iter().map(|&a| a as f64)).collect();
    let adv = normalize_advantages(&raw);
    let stats = RunningNormalizer {
        count: 5.0,
        mean: vec![0.4],
        var: vec![2.5],
    };
    let mut gp = vec![0.0; p.params.len()];
    let mut gv = vec![0.0; v.params.len()];
    minibatch_loss(&p, &v, &stats, &refs, &adv, cfg, Some((&mut gp, &mut gv))).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        let n = if which == 0 { p.params.len() } else { v.params.len() };
        for i in 0..n {
            let (mut pp, mut vv) = (p.clone(), v.clone());
            let (mut pm, mut vm) = (p.clone(), v.clone());
            if which == 0 {
                pp.params[i] += h;
                pm.params[i] -= h;
            } else {
                vv.params[i] += h;
                vm.params[i] -= h;
            }
            let num = (loss_of(&pp, &vv, &stats, &refs, &adv, cfg) - loss_of(&pm, &vm, &stats, &refs, &adv, cfg)) / (2.0 * h);
            let ana = if which == 0 { gp[i] } else { gv[i] };
            let denom = ana.abs().max(num.abs()).max(1e-6);
            let rel = (ana - num).abs() / denom;
            worst = worst.max(rel);
        }
    }
    worst
}


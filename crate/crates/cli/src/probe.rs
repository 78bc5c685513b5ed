//! Linear probe on the policy's recurrent state: can a logistic classifier
//! read off whether the object is bigger than average?

use rand::seq::SliceRandom;
use reorient_core::env::{Env, EnvConfig};
use reorient_core::nets::categorical::sample_action;
use reorient_core::nets::Core;
use reorient_core::rng::{derive_seed, seeded, stream};
use reorient_core::Net;
use serde::{Deserialize, Serialize};

use crate::config::ProbeSection;
use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    /// `[h; c]` of the policy LSTM.
    pub state: Vec<f64>,
    pub obs: Vec<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: usize,
    /// Episodes that ended before the probe time.
    pub skipped: usize,
    pub positive_fraction: f64,
    pub state_accuracy: f64,
    pub shuffled_accuracy: f64,
    pub raw_obs_accuracy: f64,
    /// Test-set accuracy of always predicting the training majority class.
    pub majority_accuracy: f64,
}

/// Rolls the policy (sampled actions) until `time` and records its state.
pub fn collect(policy: &Net, env_cfg: &EnvConfig, cfg: &ProbeSection, seed: u64) -> Result<(Vec<ProbeSample>, usize)> {
    if policy.config.core != Core::Lstm {
        return Err(CliError::Config("probe: policy has no recurrent state (feed-forward core)".into()));
    }
    if policy.config.input_dim != env_cfg.policy_obs_dim() {
        return Err(CliError::Config(format!(
            "probe: policy expects {} inputs but the environment provides {}",
            policy.config.input_dim,
            env_cfg.policy_obs_dim()
        )));
    }
    let mut samples = Vec::new();
    let mut skipped = 0;
    let mut logits = vec![0f32; policy.config.outputs];
    let mut obs = Vec::new();
    for ep in 0..cfg.episodes {
        let s = derive_seed(seed, ep as u64);
        let mut env = Env::new(env_cfg.clone(), s)?;
        let mut rng = seeded(s, stream::PROBE);
        let mut state = policy.initial_state();
        let label = env.episode.params.object_dim_scale > 1.0;
        loop {
            let (po, _) = env.observe();
            obs.clear();
            po.write_to(&mut obs);
            obs.iter_mut().for_each(|v| *v = *v as f32 as f64);
            policy.step(&obs, &mut state, &mut logits)?;
            if env.state.time >= cfg.time {
                samples.push(ProbeSample {
                    state: state.h.iter().chain(&state.c).map(|&v| v as f64).collect(),
                    obs: obs.clone(),
                    label,
                });
                break;
            }
            let (bins, _) = sample_action(&logits, &mut rng);
            match env.step(&bins) {
                Ok(ev) if ev.done.is_none() => {}
                Ok(_) | Err(reorient_core::Error::NonFiniteState) => {
                    skipped += 1;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok((samples, skipped))
}

/// L2-regularized logistic regression fitted by full-batch gradient descent
/// on standardized features.
#[derive(Debug, Clone)]
pub struct Logistic {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Logistic {
    pub fn fit(x: &[&[f64]], y: &[bool], iters: usize, lr: f64, l2: f64) -> Self {
        let d = x.first().map_or(0, |r| r.len());
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; d];
        for r in x {
            scale.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 0.0 });
        let mut model = Self { mean, scale, w: vec![0.0; d], b: 0.0 };
        let z: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r)).collect();
        let mut gw = vec![0.0; d];
        for _ in 0..iters {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(y) {
                let p = sigmoid(model.b + zi.iter().zip(&model.w).map(|(a, b)| a * b).sum::<f64>());
                let e = p - if yi { 1.0 } else { 0.0 };
                gb += e;
                gw.iter_mut().zip(zi).for_each(|(g, v)| *g += e * v);
            }
            for (w, g) in model.w.iter_mut().zip(&gw) {
                *w -= lr * (g / n + l2 * *w);
            }
            model.b -= lr * gb / n;
        }
        model
    }

    fn standardize(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    pub fn predict(&self, r: &[f64]) -> bool {
        let z = self.standardize(r);
        self.b + z.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() > 0.0
    }

    pub fn accuracy(&self, x: &[&[f64]], y: &[bool]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count() as f64 / x.len() as f64
    }
}

const ITERS: usize = 500;
const LR: f64 = 0.5;
const L2: f64 = 1e-3;

/// Held-out accuracy of a probe trained on the first `split` samples.
pub fn held_out_accuracy(x: &[&[f64]], y: &[bool], split: usize) -> f64 {
    let m = Logistic::fit(&x[..split], &y[..split], ITERS, LR, L2);
    m.accuracy(&x[split..], &y[split..])
}

pub fn analyze(samples: &[ProbeSample], skipped: usize, cfg: &ProbeSection, seed: u64) -> Result<ProbeReport> {
    let n = samples.len();
    let split = (n as f64 * cfg.train_fraction).round() as usize;
    if split < 2 || split >= n {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "probe: {n} usable samples ({skipped} episodes ended early) are too few for a split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(seed, stream::SHUFFLE);
    order.shuffle(&mut rng);
    let state: Vec<&[f64]> = order.iter().map(|&i| samples[i].state.as_slice()).collect();
    let obs: Vec<&[f64]> = order.iter().map(|&i| samples[i].obs.as_slice()).collect();
    let y: Vec<bool> = order.iter().map(|&i| samples[i].label).collect();

    let mut shuffled = 0.0;
    for _ in 0..cfg.shuffles {
        let mut ys = y.clone();
        ys.shuffle(&mut rng);
        shuffled += held_out_accuracy(&state, &ys, split);
    }
    let train_pos = y[..split].iter().filter(|&&l| l).count() * 2 >= split;
    let majority = y[split..].iter().filter(|&&l| l == train_pos).count() as f64 / (n - split) as f64;
    Ok(ProbeReport {
        samples: n,
        skipped,
        positive_fraction: y.iter().filter(|&&l| l).count() as f64 / n as f64,
        state_accuracy: held_out_accuracy(&state, &y, split),
        shuffled_accuracy: if cfg.shuffles > 0 { shuffled / cfg.shuffles as f64 } else { f64::NAN },
        raw_obs_accuracy: held_out_accuracy(&obs, &y, split),
        majority_accuracy: majority,
    })
}

pub fn probe(policy: &Net, env_cfg: &EnvConfig, cfg: &ProbeSection, seed: u64) -> Result<ProbeReport> {
    let (samples, skipped) = collect(policy, env_cfg, cfg, seed)?;
    analyze(&samples, skipped, cfg, seed)
}

pub fn format_report(r: &ProbeReport) -> String {
    format!(
        "samples {} (skipped {}), positive {:.3}\n\
         LSTM state  held-out accuracy {:.3}\n\
         shuffled    held-out accuracy {:.3}\n\
         raw obs     held-out accuracy {:.3}\n\
         majority    held-out accuracy {:.3}\n",
        r.samples, r.skipped, r.positive_fraction, r.state_accuracy, r.shuffled_accuracy, r.raw_obs_accuracy, r.majority_accuracy
    )
}

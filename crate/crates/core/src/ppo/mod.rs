//! Proximal policy optimization with generalized advantage estimation.

pub mod chunk;
pub mod rollout;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::categorical::log_prob_entropy_grad;
use crate::nets::{Network, RecurrentState, RunningNormalizer};
use crate::rng::{derive_seed, seeded, stream};
use crate::scalar::{lit, Real};
pub use chunk::Chunk;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub minibatches_per_epoch: usize,
    pub chunk_len: usize,
    /// Chunks consumed per epoch. Large-scale value: 80 000.
    pub batch_chunks: usize,
    /// Chunks per minibatch. Large-scale value: 2 560 (25.6k transitions).
    pub minibatch_chunks: usize,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.998,
            lambda: 0.95,
            entropy_coef: 0.01,
            clip: 0.2,
            learning_rate: 3e-4,
            minibatches_per_epoch: 60,
            chunk_len: 10,
            batch_chunks: 512,
            minibatch_chunks: 64,
            value_coef: 1.0,
            max_grad_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.chunk_len == 0 || self.batch_chunks == 0 || self.minibatch_chunks == 0 {
            return bad("chunk_len, batch_chunks and minibatch_chunks must be positive");
        }
        if self.minibatch_chunks > self.batch_chunks {
            return bad("minibatch_chunks exceeds batch_chunks");
        }
        Ok(())
    }
}

/// Backward recursion for GAE. `values` has one more entry than `rewards`:
/// the bootstrap value of the state after the last transition.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len + 1, "values needs a bootstrap entry");
    assert_eq!(dones.len(), t_len);
    let mut adv = vec![0.0; t_len];
    let mut next = 0.0;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Clipped surrogate objective for a single sample (to be maximized).
pub fn ppo_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Zero-mean, unit-std copy.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter().map(|a| (a - mean) / std).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub transitions: usize,
}

impl LossStats {
    /// Count-weighted average of shard statistics.
    fn combine(parts: &[LossStats]) -> LossStats {
        let n: usize = parts.iter().map(|p| p.transitions).sum();
        let mut out = LossStats {
            transitions: n,
            ..Default::default()
        };
        for p in parts {
            let w = p.transitions as f64 / n as f64;
            out.loss += w * p.loss;
            out.policy_loss += w * p.policy_loss;
            out.value_loss += w * p.value_loss;
            out.entropy += w * p.entropy;
            out.approx_kl += w * p.approx_kl;
            out.clip_fraction += w * p.clip_fraction;
        }
        out
    }
}

pub(crate) fn state_from<S: Real>(h: &[f32], c: &[f32]) -> RecurrentState<S> {
    RecurrentState {
        h: h.iter().map(|&v| S::from_f64_lossy(v as f64)).collect(),
        c: c.iter().map(|&v| S::from_f64_lossy(v as f64)).collect(),
    }
}

/// Training loss over `chunks`, averaged over their transitions.
///
/// `advantages` are already normalized over the whole minibatch and laid out
/// chunk after chunk. Value targets are normalized with `value_stats`. When
/// `grads` is given, parameter gradients of the loss are added into it.
pub fn minibatch_loss<S: Real>(
    policy: &Network<S>,
    value: &Network<S>,
    value_stats: &RunningNormalizer,
    chunks: &[&Chunk],
    advantages: &[f64],
    cfg: &PpoConfig,
    mut grads: Option<(&mut [S], &mut [S])>,
) -> Result<LossStats> {
    let n: usize = chunks.iter().map(|c| c.len).sum();
    if advantages.len() != n {
        return Err(Error::Dimension {
            what: "advantages",
            expected: n,
            got: advantages.len(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let (v_mean, v_std) = (value_stats.mean[0], value_stats.std(0));
    let outputs = policy.config.outputs;
    let mut stats = LossStats {
        transitions: n,
        ..Default::default()
    };
    let mut offset = 0;
    let mut d_logp = vec![S::zero(); outputs];
    let mut d_ent = vec![S::zero(); outputs];
    for chunk in chunks {
        let resets = chunk.resets();
        let pcache = policy.forward_seq(&chunk.policy_obs_f64(), &state_from(&chunk.policy_h0, &chunk.policy_c0), &resets)?;
        let vcache = value.forward_seq(&chunk.value_obs_f64(), &state_from(&chunk.value_h0, &chunk.value_c0), &resets)?;
        let mut d_pout = vec![S::zero(); pcache.out.len()];
        let mut d_vout = vec![S::zero(); vcache.out.len()];
        for t in 0..chunk.len {
            let logits = &pcache.out[t * outputs..(t + 1) * outputs];
            let bins = chunk.bins_at(t);
            let (logp, ent) = log_prob_entropy_grad(logits, &bins, &mut d_logp, &mut d_ent);
            let adv = advantages[offset + t];
            let log_ratio = logp.as_f64() - chunk.logp[t] as f64;
            let ratio = log_ratio.exp();
            let surr = ppo_surrogate(ratio, adv, cfg.clip);
            let unclipped_active = ratio * adv <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
            if (ratio - 1.0).abs() > cfg.clip {
                stats.clip_fraction += inv_n;
            }
            stats.policy_loss -= surr * inv_n;
            stats.entropy += ent.as_f64() * inv_n;
            stats.approx_kl -= log_ratio * inv_n;

            let v_hat = vcache.out[t];
            let target = (chunk.value_targets[t] as f64 - v_mean) / v_std;
            let err = v_hat.as_f64() - target;
            stats.value_loss += err * err * inv_n;

            let g_logp: S = if unclipped_active { lit(-adv * ratio * inv_n) } else { S::zero() };
            let g_ent: S = lit(-cfg.entropy_coef * inv_n);
            for k in 0..outputs {
                d_pout[t * outputs + k] = g_logp * d_logp[k] + g_ent * d_ent[k];
            }
            d_vout[t] = lit::<S>(2.0 * cfg.value_coef * inv_n) * (v_hat - lit(target));
        }
        if let Some((gp, gv)) = grads.as_mut() {
            policy.backward_seq(&pcache, &d_pout, gp);
            value.backward_seq(&vcache, &d_vout, gv);
        }
        offset += chunk.len;
    }
    stats.loss = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    if !stats.loss.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss",
            location: format!("{n} transitions"),
        });
    }
    Ok(stats)
}

/// Gradient of the minibatch loss computed on `shards` slices of the chunks
/// in parallel, then averaged with weights proportional to shard size.
#[allow(clippy::too_many_arguments)]
pub fn sharded_gradient<S: Real>(
    policy: &Network<S>,
    value: &Network<S>,
    value_stats: &RunningNormalizer,
    chunks: &[&Chunk],
    advantages: &[f64],
    cfg: &PpoConfig,
    shards: usize,
) -> Result<(Vec<S>, Vec<S>, LossStats)> {
    let shards = shards.clamp(1, chunks.len().max(1));
    let per = chunks.len().div_ceil(shards);
    let mut bounds = Vec::new();
    let (mut c0, mut a0) = (0, 0);
    while c0 < chunks.len() {
        let c1 = (c0 + per).min(chunks.len());
        let a1 = a0 + chunks[c0..c1].iter().map(|c| c.len).sum::<usize>();
        bounds.push((c0..c1, a0..a1));
        c0 = c1;
        a0 = a1;
    }
    let work = |(cr, ar): &(std::ops::Range<usize>, std::ops::Range<usize>)| -> Result<(Vec<S>, Vec<S>, LossStats)> {
        let mut gp = vec![S::zero(); policy.params.len()];
        let mut gv = vec![S::zero(); value.params.len()];
        let st = minibatch_loss(
            policy,
            value,
            value_stats,
            &chunks[cr.clone()],
            &advantages[ar.clone()],
            cfg,
            Some((&mut gp, &mut gv)),
        )?;
        Ok((gp, gv, st))
    };
    let results: Vec<Result<(Vec<S>, Vec<S>, LossStats)>> = if bounds.len() == 1 {
        vec![work(&bounds[0])]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = bounds.iter().map(|b| s.spawn(move || work(b))).collect();
            handles.into_iter().map(|h| h.join().expect("gradient shard panicked")).collect()
        })
    };
    let parts = results.into_iter().collect::<Result<Vec<_>>>()?;
    let total: usize = parts.iter().map(|p| p.2.transitions).sum();
    let mut gp = vec![S::zero(); policy.params.len()];
    let mut gv = vec![S::zero(); value.params.len()];
    for (p, v, st) in &parts {
        let w: S = lit(st.transitions as f64 / total as f64);
        linalg_axpy(w, p, &mut gp);
        linalg_axpy(w, v, &mut gv);
    }
    let stats: Vec<LossStats> = parts.into_iter().map(|p| p.2).collect();
    Ok((gp, gv, LossStats::combine(&stats)))
}

fn linalg_axpy<S: Real>(a: S, x: &[S], y: &mut [S]) {
    crate::nets::linalg::axpy(a, x, y)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned"))]
pub struct Adam<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Real> Adam<S> {
    pub fn new(n: usize, cfg: &PpoConfig) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: f64) {
        assert_eq!(params.len(), grads.len(), "adam: parameter/gradient shape");
        assert_eq!(params.len(), self.m.len(), "adam: state shape");
        self.t += 1;
        let (b1, b2): (S, S) = (lit(self.beta1), lit(self.beta2));
        let c1: S = lit(1.0 - self.beta1.powi(self.t as i32));
        let c2: S = lit(1.0 - self.beta2.powi(self.t as i32));
        let lr: S = lit(lr);
        let eps: S = lit(self.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (S::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (S::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Scales both gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Real>(grads: &mut [&mut [S]], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v.as_f64() * v.as_f64()).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s: S = lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Approximate KL measured on each minibatch before its update.
    pub kl_per_minibatch: Vec<f64>,
    pub transitions: usize,
}

/// Optimizer-side state: both networks, value-target statistics and Adam.
#[derive(Debug, Clone)]
pub struct Learner<S: Real> {
    pub cfg: PpoConfig,
    pub policy: Network<S>,
    pub value: Network<S>,
    pub value_stats: RunningNormalizer,
    pub adam_policy: Adam<S>,
    pub adam_value: Adam<S>,
    pub epochs: u64,
    pub seed: u64,
    pub shards: usize,
}

impl<S: Real> Learner<S> {
    pub fn new(policy: Network<S>, value: Network<S>, cfg: PpoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            adam_policy: Adam::new(policy.params.len(), &cfg),
            adam_value: Adam::new(value.params.len(), &cfg),
            value_stats: RunningNormalizer::new(1),
            cfg,
            policy,
            value,
            epochs: 0,
            seed,
            shards: 1,
        })
    }

    /// Shuffles chunks and runs the configured number of minibatch updates.
    /// Observation statistics absorb the batch afterwards so that the
    /// normalization in effect during the epoch is the one the batch was
    /// collected with.
    pub fn train_epoch(&mut self, batch: &[Chunk]) -> Result<EpochMetrics> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        for c in batch {
            c.validate().map_err(|e| Error::Config(format!("bad chunk: {e}")))?;
        }
        let targets: Vec<f64> = batch.iter().flat_map(|c| c.value_targets.iter().map(|&v| v as f64)).collect();
        let rows: Vec<&[f64]> = targets.chunks(1).collect();
        self.value_stats.update(&rows);

        let mut rng = seeded(derive_seed(self.seed, self.epochs), stream::SHUFFLE);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mb = self.cfg.minibatch_chunks.min(batch.len());
        let mut cursor = order.len();
        let mut metrics = EpochMetrics {
            epoch: self.epochs,
            ..Default::default()
        };
        let mut parts = Vec::new();
        for mb_index in 0..self.cfg.minibatches_per_epoch {
            if cursor + mb > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let chunks: Vec<&Chunk> = order[cursor..cursor + mb].iter().map(|&i| &batch[i]).collect();
            cursor += mb;
            let raw: Vec<f64> = chunks.iter().flat_map(|c| c.advantages.iter().map(|&v| v as f64)).collect();
            let adv = normalize_advantages(&raw);
            let (mut gp, mut gv, st) = sharded_gradient(
                &self.policy,
                &self.value,
                &self.value_stats,
                &chunks,
                &adv,
                &self.cfg,
                self.shards,
            )
            .map_err(|e| match e {
                Error::NonFinite { what, location } => Error::NonFinite {
                    what,
                    location: format!("minibatch {mb_index}: {location}"),
                },
                other => other,
            })?;
            self.policy.check_finite(&gp, "policy gradient")?;
            self.value.check_finite(&gv, "value gradient")?;
            let norm = clip_global_norm(&mut [&mut gp[..], &mut gv[..]], self.cfg.max_grad_norm);
            self.adam_policy.step(&mut self.policy.params, &gp, self.cfg.learning_rate);
            self.adam_value.step(&mut self.value.params, &gv, self.cfg.learning_rate);
            metrics.kl_per_minibatch.push(st.approx_kl);
            metrics.grad_norm += norm / self.cfg.minibatches_per_epoch as f64;
            parts.push(st);
        }
        let all = LossStats::combine(&parts);
        metrics.loss = all.loss;
        metrics.policy_loss = all.policy_loss;
        metrics.value_loss = all.value_loss;
        metrics.entropy = all.entropy;
        metrics.approx_kl = all.approx_kl;
        metrics.clip_fraction = all.clip_fraction;
        metrics.transitions = batch.iter().map(|c| c.len).sum();

        let pobs: Vec<f64> = batch.iter().flat_map(|c| c.policy_obs_f64()).collect();
        let vobs: Vec<f64> = batch.iter().flat_map(|c| c.value_obs_f64()).collect();
        let prow: Vec<&[f64]> = pobs.chunks(self.policy.config.input_dim).collect();
        let vrow: Vec<&[f64]> = vobs.chunks(self.value.config.input_dim).collect();
        self.policy.normalizer.update(&prow);
        self.value.normalizer.update(&vrow);

        self.epochs += 1;
        self.policy.version = self.epochs;
        self.value.version = self.epochs;
        Ok(metrics)
    }
}

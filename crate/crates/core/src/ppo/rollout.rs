//! Experience collection: a set of environments driven by the current policy,
//! cut into fixed-length chunks with GAE filled in.

use serde::{Deserialize, Serialize};

use crate::env::{value_obs, DoneReason, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::nets::categorical::sample_action;
use crate::nets::{Network, RecurrentState, RunningNormalizer};
use crate::rng::{derive_seed, seeded, stream, SimRng};
use crate::scalar::Real;

use super::{compute_gae, Chunk, PpoConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub steps: usize,
    pub episodes: usize,
    /// Consecutive goals of each episode that finished during the rollout.
    pub goals: Vec<u32>,
    pub drops: usize,
    pub timeouts: usize,
    pub reached_max: usize,
    /// Episodes cut short by a non-finite simulator state.
    pub discarded: usize,
    pub reward_sum: f64,
    /// Simulated seconds.
    pub sim_time: f64,
}

impl RolloutStats {
    pub fn merge(&mut self, o: &RolloutStats) {
        self.steps += o.steps;
        self.episodes += o.episodes;
        self.goals.extend_from_slice(&o.goals);
        self.drops += o.drops;
        self.timeouts += o.timeouts;
        self.reached_max += o.reached_max;
        self.discarded += o.discarded;
        self.reward_sum += o.reward_sum;
        self.sim_time += o.sim_time;
    }
}

pub(crate) fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub(crate) fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn state_f32<S: Real>(s: &RecurrentState<S>) -> (Vec<f32>, Vec<f32>) {
    (
        s.h.iter().map(|v| v.as_f64() as f32).collect(),
        s.c.iter().map(|v| v.as_f64() as f32).collect(),
    )
}

/// Environments plus the recurrent states of the networks acting in them.
#[derive(Debug, Clone)]
pub struct Rollout<S: Real> {
    pub envs: Vec<Env>,
    policy_states: Vec<RecurrentState<S>>,
    value_states: Vec<RecurrentState<S>>,
    rng: SimRng,
}

impl<S: Real> Rollout<S> {
    pub fn new(cfg: &EnvConfig, num_envs: usize, seed: u64, policy: &Network<S>, value: &Network<S>) -> Result<Self> {
        if policy.config.input_dim != cfg.policy_obs_dim() {
            return Err(Error::Dimension {
                what: "policy input",
                expected: cfg.policy_obs_dim(),
                got: policy.config.input_dim,
            });
        }
        if value.config.input_dim != cfg.value_obs_dim() {
            return Err(Error::Dimension {
                what: "value input",
                expected: cfg.value_obs_dim(),
                got: value.config.input_dim,
            });
        }
        let envs = (0..num_envs)
            .map(|i| Env::new(cfg.clone(), derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            envs,
            policy_states: vec![policy.initial_state(); num_envs],
            value_states: vec![value.initial_state(); num_envs],
            rng: seeded(seed, stream::POLICY),
        })
    }

    /// Runs every environment for `segment_chunks × chunk_len` steps and
    /// returns the chunks, environment by environment.
    pub fn collect(
        &mut self,
        policy: &Network<S>,
        value: &Network<S>,
        value_stats: &RunningNormalizer,
        segment_chunks: usize,
        cfg: &PpoConfig,
    ) -> Result<(Vec<Chunk>, RolloutStats)> {
        let t_len = cfg.chunk_len;
        let seg = segment_chunks * t_len;
        let k = policy.config.outputs / crate::env::NUM_BINS;
        let (pd, vd) = (policy.config.input_dim, value.config.input_dim);
        let mut stats = RolloutStats::default();
        let mut chunks = Vec::with_capacity(self.envs.len() * segment_chunks);
        let mut logits = vec![S::zero(); policy.config.outputs];
        let mut vout = vec![S::zero(); 1];

        for e in 0..self.envs.len() {
            let mut pobs = Vec::with_capacity(seg * pd);
            let mut vobs = Vec::with_capacity(seg * vd);
            let mut bins_all = Vec::with_capacity(seg * k);
            let mut logp = Vec::with_capacity(seg);
            let mut rewards = Vec::with_capacity(seg);
            let mut values = Vec::with_capacity(seg + 1);
            let mut dones = Vec::with_capacity(seg);
            let mut h0 = Vec::with_capacity(segment_chunks);

            for t in 0..seg {
                if t % t_len == 0 {
                    h0.push((state_f32(&self.policy_states[e]), state_f32(&self.value_states[e])));
                }
                let env = &mut self.envs[e];
                let (po, vo) = env.observe();
                let mut pv: Vec<f64> = Vec::with_capacity(pd);
                po.write_to(&mut pv);
                let mut vv: Vec<f64> = Vec::with_capacity(vd);
                vo.write_to(&mut vv);
                let pv32 = to_f32(&pv);
                let vv32 = to_f32(&vv);
                policy.step(&widen(&pv32), &mut self.policy_states[e], &mut logits)?;
                value.step(&widen(&vv32), &mut self.value_states[e], &mut vout)?;
                let (bins, lp) = sample_action(&logits, &mut self.rng);
                let v = value_stats.denormalize(0, vout[0].as_f64());

                let (reward, done) = match env.step(&bins) {
                    Ok(ev) => {
                        stats.sim_time += ev.duration;
                        if let Some(reason) = ev.done {
                            stats.episodes += 1;
                            stats.goals.push(env.state.consecutive_goals);
                            match reason {
                                DoneReason::Dropped => stats.drops += 1,
                                DoneReason::Timeout => stats.timeouts += 1,
                                DoneReason::ReachedMaxGoals => stats.reached_max += 1,
                            }
                        }
                        (ev.reward, ev.done.is_some())
                    }
                    Err(Error::NonFiniteState) => {
                        stats.discarded += 1;
                        (0.0, true)
                    }
                    Err(other) => return Err(other),
                };
                stats.steps += 1;
                stats.reward_sum += reward;
                if done {
                    env.reset()?;
                    self.policy_states[e].reset();
                    self.value_states[e].reset();
                }
                pobs.extend_from_slice(&pv32);
                vobs.extend_from_slice(&vv32);
                bins_all.extend(bins.iter().map(|&b| b as u8));
                logp.push(lp as f32);
                rewards.push(reward);
                values.push(v);
                dones.push(done);
            }

            // bootstrap from the noiseless value input, without consuming
            // observation noise draws
            let env = &self.envs[e];
            let mut vv: Vec<f64> = Vec::with_capacity(vd);
            value_obs(&env.state, env.params()).write_to(&mut vv);
            let mut vs = self.value_states[e].clone();
            value.step(&widen(&to_f32(&vv)), &mut vs, &mut vout)?;
            values.push(value_stats.denormalize(0, vout[0].as_f64()));

            let (adv, targets) = compute_gae(&rewards, &values, &dones, cfg.gamma, cfg.lambda);
            for (c, ((ph, pc), (vh, vc))) in h0.into_iter().enumerate() {
                let r = c * t_len..(c + 1) * t_len;
                chunks.push(Chunk {
                    len: t_len,
                    policy_dim: pd,
                    value_dim: vd,
                    joints: k,
                    policy_obs: pobs[r.start * pd..r.end * pd].to_vec(),
                    value_obs: vobs[r.start * vd..r.end * vd].to_vec(),
                    bins: bins_all[r.start * k..r.end * k].to_vec(),
                    logp: logp[r.clone()].to_vec(),
                    rewards: to_f32(&rewards[r.clone()]),
                    values: to_f32(&values[r.clone()]),
                    dones: dones[r.clone()].to_vec(),
                    advantages: to_f32(&adv[r.clone()]),
                    value_targets: to_f32(&targets[r.clone()]),
                    policy_h0: ph,
                    policy_c0: pc,
                    value_h0: vh,
                    value_c0: vc,
                    version: policy.version,
                });
            }
        }
        Ok((chunks, stats))
    }
}

//! Policy and value networks: input normalization, dense + ReLU, an LSTM (or
//! a second dense layer for the feed-forward ablation) and a linear head.
//!
//! Parameters live in one flat vector so optimizers, gradient reduction and
//! checkpoints can treat them uniformly. [`Network::tensors`] names the slices.

pub mod categorical;
pub mod checkpoint;
pub mod linalg;
pub mod normalizer;

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::NUM_BINS;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use linalg::{affine, affine_backward, matvec_acc, sigmoid};
pub use normalizer::RunningNormalizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Core {
    Lstm,
    FeedForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    /// Width of the dense ReLU layer.
    pub hidden: usize,
    /// LSTM size, or width of the second dense layer for [`Core::FeedForward`].
    pub memory: usize,
    pub core: Core,
    pub outputs: usize,
}

impl NetConfig {
    pub fn policy(input_dim: usize, joints: usize, hidden: usize, memory: usize, core: Core) -> Self {
        Self {
            input_dim,
            hidden,
            memory,
            core,
            outputs: joints * NUM_BINS,
        }
    }

    pub fn value(input_dim: usize, hidden: usize, memory: usize, core: Core) -> Self {
        Self {
            input_dim,
            hidden,
            memory,
            core,
            outputs: 1,
        }
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        let (d, h, m, o) = (self.input_dim, self.hidden, self.memory, self.outputs);
        let mut shapes: Vec<(&'static str, Vec<usize>)> = vec![("dense.w", vec![h, d]), ("dense.b", vec![h])];
        match self.core {
            Core::Lstm => {
                shapes.push(("lstm.wx", vec![4 * m, h]));
                shapes.push(("lstm.wh", vec![4 * m, m]));
                shapes.push(("lstm.b", vec![4 * m]));
            }
            Core::FeedForward => {
                shapes.push(("ff.w", vec![m, h]));
                shapes.push(("ff.b", vec![m]));
            }
        }
        shapes.push(("head.w", vec![o, m]));
        shapes.push(("head.b", vec![o]));
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let spec = TensorSpec {
                    name,
                    shape,
                    range: offset..offset + len,
                };
                offset += len;
                spec
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().last().map(|t| t.range.end).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.memory == 0 || self.outputs == 0 {
            return Err(Error::Config(format!("all network widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone)]
struct Offsets {
    dense_w: Range<usize>,
    dense_b: Range<usize>,
    core_w: Range<usize>,
    core_wh: Range<usize>,
    core_b: Range<usize>,
    head_w: Range<usize>,
    head_b: Range<usize>,
}

impl Offsets {
    fn new(cfg: &NetConfig) -> Self {
        let t = cfg.tensors();
        let get = |name: &str| t.iter().find(|s| s.name == name).map(|s| s.range.clone()).unwrap_or(0..0);
        let lstm = cfg.core == Core::Lstm;
        Self {
            dense_w: get("dense.w"),
            dense_b: get("dense.b"),
            core_w: if lstm { get("lstm.wx") } else { get("ff.w") },
            core_wh: get("lstm.wh"),
            core_b: if lstm { get("lstm.b") } else { get("ff.b") },
            head_w: get("head.w"),
            head_b: get("head.b"),
        }
    }
}

/// Per-environment recurrent state. Empty vectors for feed-forward nets.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<S> {
    pub h: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Real> RecurrentState<S> {
    pub fn zeros(cfg: &NetConfig) -> Self {
        let m = if cfg.core == Core::Lstm { cfg.memory } else { 0 };
        Self {
            h: vec![S::zero(); m],
            c: vec![S::zero(); m],
        }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = S::zero());
        self.c.iter_mut().for_each(|v| *v = S::zero());
    }
}

#[derive(Debug, Clone)]
pub struct Network<S: Real> {
    pub config: NetConfig,
    pub params: Vec<S>,
    pub normalizer: RunningNormalizer,
    pub version: u64,
    /// Hash of the experiment configuration that produced these weights.
    pub config_hash: u64,
    offsets: Offsets,
}

impl<S: Real> PartialEq for Network<S> {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.params == o.params
            && self.normalizer == o.normalizer
            && self.version == o.version
            && self.config_hash == o.config_hash
    }
}

/// Activations of a forward pass over one sequence, kept for backward.
#[derive(Debug, Clone)]
pub struct SeqCache<S> {
    pub len: usize,
    x: Vec<S>,
    a: Vec<S>,
    h_prev: Vec<S>,
    c_prev: Vec<S>,
    gates: Vec<S>,
    tanh_c: Vec<S>,
    h: Vec<S>,
    resets: Vec<bool>,
    /// Head outputs, `len × outputs`.
    pub out: Vec<S>,
}

impl<S: Real> Network<S> {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: vec![S::zero(); config.num_params()],
            normalizer: RunningNormalizer::new(config.input_dim),
            version: 0,
            config_hash: 0,
            offsets: Offsets::new(&config),
            config,
        })
    }

    /// Fan-in scaled uniform weights, orthogonal recurrent blocks, forget
    /// bias +1 and a small head so initial logits are near uniform.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let (h, m) = (config.hidden, config.memory);
        let o = net.offsets.clone();
        uniform_fill(&mut net.params[o.dense_w.clone()], (6.0 / config.input_dim as f64).sqrt(), rng);
        match config.core {
            Core::Lstm => {
                uniform_fill(&mut net.params[o.core_w.clone()], (3.0 / h as f64).sqrt(), rng);
                for gate in 0..4 {
                    let q = orthogonal(m, rng);
                    let start = o.core_wh.start + gate * m * m;
                    for (dst, v) in net.params[start..start + m * m].iter_mut().zip(q) {
                        *dst = lit(v);
                    }
                }
                for v in &mut net.params[o.core_b.start + m..o.core_b.start + 2 * m] {
                    *v = S::one();
                }
            }
            Core::FeedForward => {
                uniform_fill(&mut net.params[o.core_w.clone()], (6.0 / h as f64).sqrt(), rng);
            }
        }
        uniform_fill(&mut net.params[o.head_w.clone()], 0.01 * (3.0 / m as f64).sqrt(), rng);
        Ok(net)
    }

    pub fn from_parts(
        config: NetConfig,
        params: Vec<S>,
        normalizer: RunningNormalizer,
        version: u64,
        config_hash: u64,
    ) -> Result<Self> {
        config.validate()?;
        if params.len() != config.num_params() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: config.num_params(),
                got: params.len(),
            });
        }
        if normalizer.dim() != config.input_dim {
            return Err(Error::Dimension {
                what: "normalizer",
                expected: config.input_dim,
                got: normalizer.dim(),
            });
        }
        Ok(Self {
            offsets: Offsets::new(&config),
            config,
            params,
            normalizer,
            version,
            config_hash,
        })
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        self.config.tensors()
    }

    pub fn initial_state(&self) -> RecurrentState<S> {
        RecurrentState::zeros(&self.config)
    }

    fn core_step(&self, a: &[S], h_prev: &[S], c_prev: &[S], gates: &mut [S], tanh_c: &mut [S], h: &mut [S], c: &mut [S]) {
        let m = self.config.memory;
        let p = &self.params;
        let o = &self.offsets;
        match self.config.core {
            Core::Lstm => {
                affine(&p[o.core_w.clone()], &p[o.core_b.clone()], a, gates);
                matvec_acc(&p[o.core_wh.clone()], h_prev, gates);
                for k in 0..m {
                    let i = sigmoid(gates[k]);
                    let f = sigmoid(gates[m + k]);
                    let g = gates[2 * m + k].tanh();
                    let og = sigmoid(gates[3 * m + k]);
                    gates[k] = i;
                    gates[m + k] = f;
                    gates[2 * m + k] = g;
                    gates[3 * m + k] = og;
                    c[k] = f * c_prev[k] + i * g;
                    tanh_c[k] = c[k].tanh();
                    h[k] = og * tanh_c[k];
                }
            }
            Core::FeedForward => {
                affine(&p[o.core_w.clone()], &p[o.core_b.clone()], a, h);
                for v in h.iter_mut() {
                    *v = v.max(S::zero());
                }
            }
        }
    }

    fn dense(&self, x: &[S], a: &mut [S]) {
        affine(&self.params[self.offsets.dense_w.clone()], &self.params[self.offsets.dense_b.clone()], x, a);
        for v in a.iter_mut() {
            *v = v.max(S::zero());
        }
    }

    /// One time step for acting. `out` receives the head outputs.
    pub fn step(&self, obs: &[f64], state: &mut RecurrentState<S>, out: &mut [S]) -> Result<()> {
        let cfg = &self.config;
        if out.len() != cfg.outputs {
            return Err(Error::Dimension {
                what: "network output",
                expected: cfg.outputs,
                got: out.len(),
            });
        }
        let mut x = vec![S::zero(); cfg.input_dim];
        self.normalizer.apply(obs, &mut x)?;
        let mut a = vec![S::zero(); cfg.hidden];
        self.dense(&x, &mut a);
        let m = cfg.memory;
        let mut h = vec![S::zero(); m];
        match cfg.core {
            Core::Lstm => {
                let mut gates = vec![S::zero(); 4 * m];
                let mut tanh_c = vec![S::zero(); m];
                let mut c = vec![S::zero(); m];
                self.core_step(&a, &state.h, &state.c, &mut gates, &mut tanh_c, &mut h, &mut c);
                state.h.copy_from_slice(&h);
                state.c.copy_from_slice(&c);
            }
            Core::FeedForward => {
                self.core_step(&a, &[], &[], &mut [], &mut [], &mut h, &mut []);
            }
        }
        affine(&self.params[self.offsets.head_w.clone()], &self.params[self.offsets.head_b.clone()], &h, out);
        Ok(())
    }

    /// Forward over a sequence of raw observations (`len × input_dim`).
    /// `resets[t]` zeroes the recurrent state before step `t`.
    pub fn forward_seq(&self, obs: &[f64], init: &RecurrentState<S>, resets: &[bool]) -> Result<SeqCache<S>> {
        let cfg = &self.config;
        let (d, hd, m, no) = (cfg.input_dim, cfg.hidden, cfg.memory, cfg.outputs);
        if obs.len() % d != 0 || obs.len() / d != resets.len() {
            return Err(Error::Dimension {
                what: "observation sequence",
                expected: resets.len() * d,
                got: obs.len(),
            });
        }
        let t_len = resets.len();
        let lstm = cfg.core == Core::Lstm;
        let mut cache = SeqCache {
            len: t_len,
            x: vec![S::zero(); t_len * d],
            a: vec![S::zero(); t_len * hd],
            h_prev: vec![S::zero(); if lstm { t_len * m } else { 0 }],
            c_prev: vec![S::zero(); if lstm { t_len * m } else { 0 }],
            gates: vec![S::zero(); if lstm { t_len * 4 * m } else { 0 }],
            tanh_c: vec![S::zero(); if lstm { t_len * m } else { 0 }],
            h: vec![S::zero(); t_len * m],
            resets: resets.to_vec(),
            out: vec![S::zero(); t_len * no],
        };
        let mut h_cur = init.h.clone();
        let mut c_cur = init.c.clone();
        let mut c_next = vec![S::zero(); if lstm { m } else { 0 }];
        for t in 0..t_len {
            self.normalizer.apply(&obs[t * d..(t + 1) * d], &mut cache.x[t * d..(t + 1) * d])?;
            let (x, a) = (&cache.x[t * d..(t + 1) * d], &mut cache.a[t * hd..(t + 1) * hd]);
            self.dense(x, a);
            let a = &cache.a[t * hd..(t + 1) * hd];
            if lstm {
                if resets[t] {
                    h_cur.iter_mut().for_each(|v| *v = S::zero());
                    c_cur.iter_mut().for_each(|v| *v = S::zero());
                }
                cache.h_prev[t * m..(t + 1) * m].copy_from_slice(&h_cur);
                cache.c_prev[t * m..(t + 1) * m].copy_from_slice(&c_cur);
                self.core_step(
                    a,
                    &h_cur,
                    &c_cur,
                    &mut cache.gates[t * 4 * m..(t + 1) * 4 * m],
                    &mut cache.tanh_c[t * m..(t + 1) * m],
                    &mut cache.h[t * m..(t + 1) * m],
                    &mut c_next,
                );
                h_cur.copy_from_slice(&cache.h[t * m..(t + 1) * m]);
                std::mem::swap(&mut c_cur, &mut c_next);
            } else {
                self.core_step(a, &[], &[], &mut [], &mut [], &mut cache.h[t * m..(t + 1) * m], &mut []);
            }
            affine(
                &self.params[self.offsets.head_w.clone()],
                &self.params[self.offsets.head_b.clone()],
                &cache.h[t * m..(t + 1) * m],
                &mut cache.out[t * no..(t + 1) * no],
            );
        }
        Ok(cache)
    }

    /// Backpropagation through time. `d_out` is the loss gradient with respect
    /// to `cache.out`; parameter gradients are added into `grad`.
    pub fn backward_seq(&self, cache: &SeqCache<S>, d_out: &[S], grad: &mut [S]) {
        let cfg = &self.config;
        let (d, hd, m, no) = (cfg.input_dim, cfg.hidden, cfg.memory, cfg.outputs);
        assert_eq!(d_out.len(), cache.len * no, "output gradient shape");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer shape");
        let o = self.offsets.clone();
        let p = &self.params;
        let lstm = cfg.core == Core::Lstm;

        let mut dh_next = vec![S::zero(); m];
        let mut dc_next = vec![S::zero(); m];
        let mut dh = vec![S::zero(); m];
        let mut dz = vec![S::zero(); if lstm { 4 * m } else { m }];
        let mut da = vec![S::zero(); hd];
        let mut dh_prev = vec![S::zero(); m];
        let mut dc_prev = vec![S::zero(); m];

        for t in (0..cache.len).rev() {
            let h_t = &cache.h[t * m..(t + 1) * m];
            let a_t = &cache.a[t * hd..(t + 1) * hd];
            let dy = &d_out[t * no..(t + 1) * no];

            dh.copy_from_slice(&dh_next);
            {
                let (before, rest) = grad.split_at_mut(o.head_b.start);
                affine_backward(
                    &p[o.head_w.clone()],
                    h_t,
                    dy,
                    &mut before[o.head_w.clone()],
                    Some(&mut rest[..no]),
                    Some(&mut dh),
                );
            }

            da.iter_mut().for_each(|v| *v = S::zero());
            if lstm {
                let g = &cache.gates[t * 4 * m..(t + 1) * 4 * m];
                let tc = &cache.tanh_c[t * m..(t + 1) * m];
                let c_prev = &cache.c_prev[t * m..(t + 1) * m];
                for k in 0..m {
                    let (i, f, gg, og) = (g[k], g[m + k], g[2 * m + k], g[3 * m + k]);
                    let d_o = dh[k] * tc[k];
                    let dc = dh[k] * og * (S::one() - tc[k] * tc[k]) + dc_next[k];
                    dz[k] = dc * gg * i * (S::one() - i);
                    dz[m + k] = dc * c_prev[k] * f * (S::one() - f);
                    dz[2 * m + k] = dc * i * (S::one() - gg * gg);
                    dz[3 * m + k] = d_o * og * (S::one() - og);
                    dc_prev[k] = dc * f;
                }
                let h_prev = &cache.h_prev[t * m..(t + 1) * m];
                affine_backward(&p[o.core_wh.clone()], h_prev, &dz, &mut grad[o.core_wh.clone()], None, None);
                {
                    let (before, rest) = grad.split_at_mut(o.core_b.start);
                    affine_backward(
                        &p[o.core_w.clone()],
                        a_t,
                        &dz,
                        &mut before[o.core_w.clone()],
                        Some(&mut rest[..4 * m]),
                        Some(&mut da),
                    );
                }
                dh_prev.iter_mut().for_each(|v| *v = S::zero());
                let wh = &p[o.core_wh.clone()];
                for (r, &gz) in dz.iter().enumerate() {
                    if gz != S::zero() {
                        linalg::axpy(gz, &wh[r * m..(r + 1) * m], &mut dh_prev);
                    }
                }
                if cache.resets[t] {
                    dh_next.iter_mut().for_each(|v| *v = S::zero());
                    dc_next.iter_mut().for_each(|v| *v = S::zero());
                } else {
                    dh_next.copy_from_slice(&dh_prev);
                    dc_next.copy_from_slice(&dc_prev);
                }
            } else {
                for k in 0..m {
                    dz[k] = if h_t[k] > S::zero() { dh[k] } else { S::zero() };
                }
                let (before, rest) = grad.split_at_mut(o.core_b.start);
                affine_backward(
                    &p[o.core_w.clone()],
                    a_t,
                    &dz,
                    &mut before[o.core_w.clone()],
                    Some(&mut rest[..m]),
                    Some(&mut da),
                );
            }

            for (k, v) in da.iter_mut().enumerate() {
                if a_t[k] <= S::zero() {
                    *v = S::zero();
                }
            }
            let (before, rest) = grad.split_at_mut(o.dense_b.start);
            affine_backward(
                &p[o.dense_w.clone()],
                &cache.x[t * d..(t + 1) * d],
                &da,
                &mut before[o.dense_w.clone()],
                Some(&mut rest[..hd]),
                None,
            );
        }
    }

    /// Names the first tensor holding a non-finite entry of `grad`.
    pub fn check_finite(&self, grad: &[S], what: &'static str) -> Result<()> {
        for spec in self.tensors() {
            if let Some(i) = grad[spec.range.clone()].iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what,
                    location: format!("{}[{i}]", spec.name),
                });
            }
        }
        Ok(())
    }

    /// Same architecture, different scalar type.
    pub fn cast<T: Real>(&self) -> Network<T> {
        Network {
            config: self.config,
            params: self.params.iter().map(|v| T::from_f64_lossy(v.as_f64())).collect(),
            normalizer: self.normalizer.clone(),
            version: self.version,
            config_hash: self.config_hash,
            offsets: self.offsets.clone(),
        }
    }
}

fn uniform_fill<S: Real, R: Rng + ?Sized>(out: &mut [S], bound: f64, rng: &mut R) {
    for v in out {
        *v = lit(rng.random_range(-bound..bound));
    }
}

/// Random `n × n` orthogonal matrix (Gram-Schmidt on a Gaussian draw), row-major.
fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= p * ri;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

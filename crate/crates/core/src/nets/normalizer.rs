use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const CLIP_STD: f64 = 5.0;

/// Streaming per-channel mean and variance. Statistics are kept in `f64`
/// whatever the network's scalar type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Statistics of a batch of row vectors, computed directly.
    pub fn from_batch(dim: usize, rows: &[&[f64]]) -> Self {
        let mut out = Self::new(dim);
        if rows.is_empty() {
            return out;
        }
        let n = rows.len() as f64;
        for d in 0..dim {
            let m = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[d] - m) * (r[d] - m)).sum::<f64>() / n;
            out.mean[d] = m;
            out.var[d] = v;
        }
        out.count = n;
        out
    }

    /// Parallel combination of two sets of statistics.
    pub fn merge(&mut self, other: &RunningNormalizer) {
        assert_eq!(self.dim(), other.dim(), "normalizer dimension mismatch");
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.count + other.count;
        let wa = self.count / n;
        let wb = other.count / n;
        for d in 0..self.dim() {
            let delta = other.mean[d] - self.mean[d];
            let m2 = self.var[d] * self.count
                + other.var[d] * other.count
                + delta * delta * self.count * other.count / n;
            self.mean[d] = self.mean[d] * wa + other.mean[d] * wb;
            self.var[d] = m2 / n;
        }
        self.count = n;
    }

    pub fn update(&mut self, rows: &[&[f64]]) {
        let batch = Self::from_batch(self.dim(), rows);
        self.merge(&batch);
    }

    pub fn std(&self, d: usize) -> f64 {
        self.var[d].max(VARIANCE_FLOOR).sqrt()
    }

    pub fn apply_one(&self, d: usize, x: f64) -> f64 {
        ((x - self.mean[d]) / self.std(d)).clamp(-CLIP_STD, CLIP_STD)
    }

    pub fn apply<S: Real>(&self, x: &[f64], out: &mut [S]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                what: "observation",
                expected: self.dim(),
                got: x.len(),
            });
        }
        for (d, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            *o = S::from_f64_lossy(self.apply_one(d, v));
        }
        Ok(())
    }

    /// Inverse of the affine part, for de-normalizing value predictions.
    pub fn denormalize(&self, d: usize, y: f64) -> f64 {
        y * self.std(d) + self.mean[d]
    }
}

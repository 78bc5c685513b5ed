//! Published parameters: both networks (with their observation
//! normalizers) and the value-target statistics.
//!
//! ```text
//! "RBLB" | u64 version | u32 len, policy checkpoint | u32 len, value checkpoint
//! u32 dim | f64 count | f64 mean[dim] | f64 var[dim]
//! ```

use reorient_core::nets::RunningNormalizer;
use reorient_core::{Net, PpoLearner};

use crate::wire::{put_bytes, Cursor};
use crate::{RapidError, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"RBLB";

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlob {
    pub version: u64,
    pub policy: Net,
    pub value: Net,
    pub value_stats: RunningNormalizer,
}

impl ParameterBlob {
    pub fn from_learner(l: &PpoLearner) -> Self {
        Self {
            version: l.epochs,
            policy: l.policy.clone(),
            value: l.value.clone(),
            value_stats: l.value_stats.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_bytes(&mut out, &self.policy.to_bytes());
        put_bytes(&mut out, &self.value.to_bytes());
        let s = &self.value_stats;
        out.extend_from_slice(&(s.dim() as u32).to_le_bytes());
        out.extend_from_slice(&s.count.to_le_bytes());
        for v in s.mean.iter().chain(&s.var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let version = peek_version(bytes)?;
        let mut r = Cursor::new(&bytes[12..]);
        let policy = Net::from_bytes(r.bytes()?)?;
        let value = Net::from_bytes(r.bytes()?)?;
        let dim = r.u32()? as usize;
        if dim > 1 << 16 {
            return Err(RapidError::Protocol(format!("value statistics dimension {dim}")));
        }
        let count = r.f64()?;
        let mut mean = Vec::with_capacity(dim);
        for _ in 0..dim {
            mean.push(r.f64()?);
        }
        let mut var = Vec::with_capacity(dim);
        for _ in 0..dim {
            var.push(r.f64()?);
        }
        r.finish()?;
        Ok(Self {
            version,
            policy,
            value,
            value_stats: RunningNormalizer { count, mean, var },
        })
    }
}

/// Version of an encoded blob, read from its header only.
pub fn peek_version(bytes: &[u8]) -> Result<u64> {
    if bytes.len() < 12 || &bytes[..4] != BLOB_MAGIC {
        return Err(RapidError::Protocol("not a parameter blob".into()));
    }
    Ok(u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")))
}

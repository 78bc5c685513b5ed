//! Binary checkpoint format.
//!
//! ```text
//! "RRL1"
//! u32 tensor count
//! per tensor: u32 name length, name (utf-8), u8 dtype (0 = f32, 1 = f64),
//!             u32 rank, u32 dims..., little-endian data
//! u32 normalizer dim, f64 count, f64 mean[dim], f64 var[dim]
//! u64 version
//! u64 config hash
//! ```
//! All integers are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Core, NetConfig, Network, RunningNormalizer};

pub const MAGIC: &[u8; 4] = b"RRL1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Widened to `f64`; `dtype` records how it was stored.
    pub data: Vec<f64>,
    pub dtype: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub tensors: Vec<Tensor>,
    pub normalizer: RunningNormalizer,
    pub version: u64,
    pub config_hash: u64,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_tensor<S: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[S]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    out.push(S::DTYPE);
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for &v in data {
        v.write_le(out);
    }
}

pub fn write_normalizer(out: &mut Vec<u8>, n: &RunningNormalizer) {
    put_u32(out, n.dim());
    out.extend_from_slice(&n.count.to_le_bytes());
    for v in n.mean.iter().chain(&n.var) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    let name_len = r.u32()?;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
        .to_string();
    let dtype = r.take(1)?[0];
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype tag {other} for {name}"))),
    };
    let rank = r.u32()?;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("implausible rank {rank} for {name}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len: usize = 1;
    for _ in 0..rank {
        let d = r.u32()?;
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::Checkpoint(format!("shape overflow for {name}")))?;
        shape.push(d);
    }
    if len.saturating_mul(width) > r.remaining() {
        return Err(Error::Checkpoint(format!("data for {name} runs past end of file")));
    }
    let bytes = r.take(len * width)?;
    let data = if dtype == 0 {
        bytes.chunks_exact(4).map(|b| f32::read_le(b) as f64).collect()
    } else {
        bytes.chunks_exact(8).map(f64::read_le).collect()
    };
    Ok(Tensor {
        name,
        shape,
        data,
        dtype,
    })
}

pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an RRL1 checkpoint".into()));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        tensors.push(read_tensor(&mut r)?);
    }
    let dim = r.u32()?;
    if dim.saturating_mul(16) > r.remaining() {
        return Err(Error::Checkpoint("normalizer runs past end of file".into()));
    }
    let count_obs = r.f64()?;
    let mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let var = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let version = r.u64()?;
    let config_hash = r.u64()?;
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(TensorFile {
        tensors,
        normalizer: RunningNormalizer {
            count: count_obs,
            mean,
            var,
        },
        version,
        config_hash,
    })
}

pub fn encode(file_tensors: &[(&str, &[usize], &[f64], u8)], normalizer: &RunningNormalizer, version: u64, config_hash: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, file_tensors.len());
    for (name, shape, data, dtype) in file_tensors {
        if *dtype == 0 {
            let d: Vec<f32> = data.iter().map(|&v| v as f32).collect();
            write_tensor(&mut out, name, shape, &d);
        } else {
            write_tensor(&mut out, name, shape, data);
        }
    }
    write_normalizer(&mut out, normalizer);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    out
}

impl<S: Real> Network<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let specs = self.tensors();
        put_u32(&mut out, specs.len());
        for spec in &specs {
            write_tensor(&mut out, spec.name, &spec.shape, &self.params[spec.range.clone()]);
        }
        write_normalizer(&mut out, &self.normalizer);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out
    }

    /// Rebuilds a network from its checkpoint. The architecture is inferred
    /// from the tensor shapes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file = decode(bytes)?;
        let shape = |name: &str| -> Result<Vec<usize>> {
            file.get(name)
                .map(|t| t.shape.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let dense = shape("dense.w")?;
        let head = shape("head.w")?;
        if dense.len() != 2 || head.len() != 2 {
            return Err(Error::Checkpoint("weight tensors must be rank 2".into()));
        }
        let core = if file.get("lstm.wx").is_some() { Core::Lstm } else { Core::FeedForward };
        let config = NetConfig {
            input_dim: dense[1],
            hidden: dense[0],
            memory: head[1],
            core,
            outputs: head[0],
        };
        let specs = config.tensors();
        if file.tensors.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                file.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(config.num_params());
        for spec in &specs {
            let t = file
                .get(spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", spec.name)))?;
            if t.shape != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    spec.name, t.shape, spec.shape
                )));
            }
            params.extend(t.data.iter().map(|&v| S::from_f64_lossy(v)));
        }
        Network::from_parts(config, params, file.normalizer, file.version, file.config_hash)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

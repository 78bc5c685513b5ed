//! Framing and the experience-chunk encoding.
//!
//! Frame: `u32 length (LE) | u8 verb | payload`, where `length` counts the
//! verb byte plus the payload.
//!
//! Chunk:
//! ```text
//! u16 schema | u32 worker | u64 policy version
//! u32 T | u32 policy dim | u32 value dim | u32 joints | u32 policy state | u32 value state
//! f32 policy obs[T*P] | f32 value obs[T*V] | u8 bins[T*K] | f32 logp[T]
//! f32 rewards[T] | f32 values[T] | u8 dones[T] | f32 advantages[T] | f32 targets[T]
//! f32 policy h0, c0 | f32 value h0, c0
//! u32 crc32 of everything above
//! ```

use std::io::{Read, Write};

use reorient_core::ppo::Chunk;

use crate::{RapidError, Result};

pub const PING: u8 = 0x01;
pub const PUT_PARAMS: u8 = 0x02;
pub const GET_PARAMS: u8 = 0x03;
pub const PUSH_EXP: u8 = 0x04;
pub const POP_EXP: u8 = 0x05;
pub const OK: u8 = 0x80;
pub const ERROR: u8 = 0xFF;

pub const MAX_FRAME: usize = 64 << 20;
pub const CHUNK_SCHEMA: u16 = 1;
/// Largest dimension accepted in a chunk header.
const MAX_DIM: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub verb: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(verb: u8, payload: Vec<u8>) -> Self {
        Self { verb, payload }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Self::new(ERROR, msg.into().into_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&((self.payload.len() + 1) as u32).to_le_bytes());
        out.push(self.verb);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(w: &mut impl Write, f: &Frame) -> Result<()> {
    w.write_all(&f.to_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(RapidError::Protocol("stream ended inside a frame header".into())),
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME {
        return Err(RapidError::Protocol(format!("frame length {len} out of range")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => RapidError::Protocol("stream ended inside a frame".into()),
        _ => RapidError::Io(e),
    })?;
    let verb = body[0];
    body.remove(0);
    Ok(Some(Frame { verb, payload: body }))
}

/// Little-endian cursor with bounds-checked reads.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.buf.len()) {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(RapidError::Protocol(format!("truncated payload at byte {}", self.pos))),
        }
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| RapidError::Protocol("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    /// `u32` length followed by that many bytes.
    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(RapidError::Protocol(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_chunk(worker: u32, c: &Chunk) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHUNK_SCHEMA.to_le_bytes());
    out.extend_from_slice(&worker.to_le_bytes());
    out.extend_from_slice(&c.version.to_le_bytes());
    for d in [c.len, c.policy_dim, c.value_dim, c.joints, c.policy_h0.len(), c.value_h0.len()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(&mut out, &c.policy_obs);
    put_f32s(&mut out, &c.value_obs);
    out.extend_from_slice(&c.bins);
    put_f32s(&mut out, &c.logp);
    put_f32s(&mut out, &c.rewards);
    put_f32s(&mut out, &c.values);
    out.extend(c.dones.iter().map(|&d| d as u8));
    put_f32s(&mut out, &c.advantages);
    put_f32s(&mut out, &c.value_targets);
    put_f32s(&mut out, &c.policy_h0);
    put_f32s(&mut out, &c.policy_c0);
    put_f32s(&mut out, &c.value_h0);
    put_f32s(&mut out, &c.value_c0);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Checks the trailer checksum without decoding.
pub fn verify_chunk(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(RapidError::Protocol("chunk shorter than its checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let want = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != want {
        return Err(RapidError::Protocol("chunk checksum mismatch".into()));
    }
    Ok(())
}

pub fn decode_chunk(bytes: &[u8]) -> Result<(u32, Chunk)> {
    verify_chunk(bytes)?;
    let mut r = Cursor::new(&bytes[..bytes.len() - 4]);
    let schema = r.u16()?;
    if schema != CHUNK_SCHEMA {
        return Err(RapidError::Protocol(format!("unknown chunk schema {schema}")));
    }
    let worker = r.u32()?;
    let version = r.u64()?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
        if *d > MAX_DIM {
            return Err(RapidError::Protocol(format!("chunk dimension {d} too large")));
        }
    }
    let [t, pd, vd, k, ph, vh] = dims;
    let policy_obs = r.f32s(t * pd)?;
    let value_obs = r.f32s(t * vd)?;
    let bins = r.take(t * k)?.to_vec();
    let logp = r.f32s(t)?;
    let rewards = r.f32s(t)?;
    let values = r.f32s(t)?;
    let dones = r
        .take(t)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(RapidError::Protocol("done flag is not 0 or 1".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    let chunk = Chunk {
        len: t,
        policy_dim: pd,
        value_dim: vd,
        joints: k,
        policy_obs,
        value_obs,
        bins,
        logp,
        rewards,
        values,
        dones,
        advantages: r.f32s(t)?,
        value_targets: r.f32s(t)?,
        policy_h0: r.f32s(ph)?,
        policy_c0: r.f32s(ph)?,
        value_h0: r.f32s(vh)?,
        value_c0: r.f32s(vh)?,
        version,
    };
    r.finish()?;
    chunk.validate().map_err(RapidError::Protocol)?;
    Ok((worker, chunk))
}

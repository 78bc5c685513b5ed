//! In-memory store: newest parameter blob plus a bounded experience queue,
//! served over TCP or used directly in-process.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::blob::peek_version;
use crate::wire::{self, read_frame, verify_chunk, write_frame, Cursor, Frame};
use crate::{RapidError, Result};

pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub pushes: u64,
    pub pops: u64,
    pub drops: u64,
    pub queued: u64,
}

#[derive(Debug, Default)]
struct Inner {
    params: Option<(u64, Vec<u8>)>,
    queue: VecDeque<Vec<u8>>,
    pushes: u64,
    pops: u64,
    drops: u64,
}

#[derive(Debug)]
pub struct Store {
    inner: Mutex<Inner>,
    capacity: usize,
}

impl Store {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            capacity: capacity.max(1),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Rejects a blob older than the one held.
    pub fn put_params(&self, blob: Vec<u8>) -> Result<()> {
        let version = peek_version(&blob)?;
        let mut g = self.lock();
        if let Some((held, _)) = &g.params {
            if version < *held {
                return Err(RapidError::Rejected(format!("version regression {version} < {held}")));
            }
        }
        g.params = Some((version, blob));
        Ok(())
    }

    pub fn get_params(&self) -> Option<Vec<u8>> {
        self.lock().params.as_ref().map(|(_, b)| b.clone())
    }

    pub fn params_version(&self) -> Option<u64> {
        self.lock().params.as_ref().map(|(v, _)| *v)
    }

    /// Queues a checksummed chunk, dropping the oldest one when full.
    pub fn push(&self, chunk: Vec<u8>) -> Result<()> {
        verify_chunk(&chunk)?;
        let mut g = self.lock();
        if g.queue.len() >= self.capacity {
            g.queue.pop_front();
            g.drops += 1;
        }
        g.queue.push_back(chunk);
        g.pushes += 1;
        Ok(())
    }

    pub fn pop(&self, max_n: usize) -> Vec<Vec<u8>> {
        let mut g = self.lock();
        let n = max_n.min(g.queue.len());
        let out: Vec<Vec<u8>> = g.queue.drain(..n).collect();
        g.pops += n as u64;
        out
    }

    pub fn counters(&self) -> StoreCounters {
        let g = self.lock();
        StoreCounters {
            pushes: g.pushes,
            pops: g.pops,
            drops: g.drops,
            queued: g.queue.len() as u64,
        }
    }

    /// Response to one request, and whether the connection must close.
    pub fn handle(&self, req: Frame) -> (Frame, bool) {
        let reply = |r: Result<Vec<u8>>| match r {
            Ok(p) => (Frame::new(wire::OK, p), false),
            Err(e) => (Frame::error(e.to_string()), false),
        };
        match req.verb {
            wire::PING if req.payload.is_empty() => reply(Ok(Vec::new())),
            wire::PUT_PARAMS => reply(self.put_params(req.payload).map(|_| Vec::new())),
            wire::GET_PARAMS if req.payload.is_empty() => reply(Ok(self.get_params().unwrap_or_default())),
            wire::PUSH_EXP => reply(self.push(req.payload).map(|_| Vec::new())),
            wire::POP_EXP if req.payload.len() == 4 => {
                let max_n = u32::from_le_bytes(req.payload[..4].try_into().expect("4 bytes")) as usize;
                let chunks = self.pop(max_n);
                let mut out = Vec::new();
                out.extend_from_slice(&(chunks.len() as u32).to_le_bytes());
                for c in &chunks {
                    wire::put_bytes(&mut out, c);
                }
                reply(Ok(out))
            }
            verb => (Frame::error(format!("malformed request (verb {verb:#04x})")), true),
        }
    }

    fn serve_connection(&self, stream: TcpStream) {
        let peer = stream.peer_addr().ok();
        let Ok(read_half) = stream.try_clone() else { return };
        let mut reader = BufReader::new(read_half);
        let mut writer = BufWriter::new(stream);
        loop {
            let (resp, close) = match read_frame(&mut reader) {
                Ok(None) => break,
                Ok(Some(req)) => self.handle(req),
                Err(RapidError::Io(_)) => break,
                Err(e) => (Frame::error(e.to_string()), true),
            };
            if write_frame(&mut writer, &resp).is_err() || close {
                if close {
                    log::debug!("closing connection from {peer:?}: {}", String::from_utf8_lossy(&resp.payload));
                }
                break;
            }
        }
        if let Ok(s) = writer.into_inner() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

/// Accept loop with one thread per connection.
pub struct StoreServer {
    pub store: Arc<Store>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl StoreServer {
    pub fn bind(addr: impl ToSocketAddrs, capacity: usize) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let store = Arc::new(Store::new(capacity));
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let store = store.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let _ = stream.set_nodelay(true);
                    let store = store.clone();
                    std::thread::spawn(move || store.serve_connection(stream));
                }
            })
        };
        Ok(Self {
            store,
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends, which only happens on shutdown.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Operations a worker or optimizer needs from a store, whatever the
/// transport.
pub trait StoreHandle: Send {
    fn ping(&mut self) -> Result<()>;
    fn put_params(&mut self, blob: &[u8]) -> Result<()>;
    /// Never blocks on the store side; `None` before the first publication.
    fn get_params(&mut self) -> Result<Option<Vec<u8>>>;
    fn push(&mut self, chunk: &[u8]) -> Result<()>;
    /// Up to `max_n` chunks, oldest first, possibly none.
    fn pop(&mut self, max_n: usize) -> Result<Vec<Vec<u8>>>;
}

#[derive(Debug, Clone)]
pub struct LocalStore(pub Arc<Store>);

impl StoreHandle for LocalStore {
    fn ping(&mut self) -> Result<()> {
        Ok(())
    }

    fn put_params(&mut self, blob: &[u8]) -> Result<()> {
        self.0.put_params(blob.to_vec())
    }

    fn get_params(&mut self) -> Result<Option<Vec<u8>>> {
        Ok(self.0.get_params())
    }

    fn push(&mut self, chunk: &[u8]) -> Result<()> {
        self.0.push(chunk.to_vec())
    }

    fn pop(&mut self, max_n: usize) -> Result<Vec<Vec<u8>>> {
        Ok(self.0.pop(max_n))
    }
}

pub struct StoreClient {
    addr: SocketAddr,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl StoreClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| RapidError::Protocol("address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        Ok(Self {
            addr,
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn request(&mut self, req: &Frame) -> Result<Frame> {
        write_frame(&mut self.writer, req)?;
        let resp = read_frame(&mut self.reader)?
            .ok_or_else(|| RapidError::Protocol("store closed the connection".into()))?;
        match resp.verb {
            wire::OK => Ok(resp),
            wire::ERROR => Err(RapidError::Rejected(String::from_utf8_lossy(&resp.payload).into_owned())),
            v => Err(RapidError::Protocol(format!("unexpected reply verb {v:#04x}"))),
        }
    }
}

impl StoreHandle for StoreClient {
    fn ping(&mut self) -> Result<()> {
        self.request(&Frame::new(wire::PING, Vec::new())).map(|_| ())
    }

    fn put_params(&mut self, blob: &[u8]) -> Result<()> {
        self.request(&Frame::new(wire::PUT_PARAMS, blob.to_vec())).map(|_| ())
    }

    fn get_params(&mut self) -> Result<Option<Vec<u8>>> {
        let r = self.request(&Frame::new(wire::GET_PARAMS, Vec::new()))?;
        Ok(if r.payload.is_empty() { None } else { Some(r.payload) })
    }

    fn push(&mut self, chunk: &[u8]) -> Result<()> {
        self.request(&Frame::new(wire::PUSH_EXP, chunk.to_vec())).map(|_| ())
    }

    fn pop(&mut self, max_n: usize) -> Result<Vec<Vec<u8>>> {
        let n = max_n.min(u32::MAX as usize) as u32;
        let r = self.request(&Frame::new(wire::POP_EXP, n.to_le_bytes().to_vec()))?;
        let mut c = Cursor::new(&r.payload);
        let count = c.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(max_n));
        for _ in 0..count {
            out.push(c.bytes()?.to_vec());
        }
        c.finish()?;
        Ok(out)
    }
}

/// Connects to every address in a comma-separated list.
pub fn connect_all(list: &str) -> Result<Vec<Box<dyn StoreHandle>>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|a| StoreClient::connect(a.trim()).map(|c| Box::new(c) as Box<dyn StoreHandle>))
        .collect()
}

//! Action messages over UDP: single-line JSON datagrams, a lossy sender thread
//! and the pen subscriber.

use std::collections::VecDeque;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use kinact_core::runtime::{ActionMessage, PenController, PenMode, PenState};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DATAGRAM: usize = 512;
pub const QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Error)]
pub enum UdpError {
    #[error("encoded message is {0} bytes")]
    TooLarge(usize),
    #[error("malformed datagram: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("label outside its group or non-finite timestamp")]
    Invalid,
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode(msg: &ActionMessage) -> Result<Vec<u8>, UdpError> {
    if !msg.is_valid() {
        return Err(UdpError::Invalid);
    }
    let buf = serde_json::to_vec(msg)?;
    if buf.len() >= MAX_DATAGRAM {
        return Err(UdpError::TooLarge(buf.len()));
    }
    Ok(buf)
}

pub fn decode(buf: &[u8]) -> Result<ActionMessage, UdpError> {
    let msg: ActionMessage = serde_json::from_slice(buf)?;
    if !msg.is_valid() {
        return Err(UdpError::Invalid);
    }
    Ok(msg)
}

pub fn resolve(dest: &str) -> Result<SocketAddr, UdpError> {
    dest.to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| UdpError::Resolve(dest.to_owned()))
}

/// Bounded FIFO that discards its oldest entry when full.
#[derive(Debug)]
pub struct DropOldest<T> {
    state: Mutex<QueueState<T>>,
    ready: Condvar,
    capacity: usize,
}

#[derive(Debug)]
struct QueueState<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

impl<T> DropOldest<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            state: Mutex::new(QueueState {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
            capacity,
        }
    }

    /// Returns whether an older item was discarded to make room.
    pub fn push(&self, item: T) -> bool {
        let mut s = self.state.lock().unwrap();
        let full = s.items.len() == self.capacity;
        if full {
            s.items.pop_front();
            s.dropped += 1;
        }
        s.items.push_back(item);
        drop(s);
        self.ready.notify_one();
        full
    }

    /// Blocks until an item arrives; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(item) = s.items.pop_front() {
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap();
        }
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderStats {
    pub sent: u64,
    pub failed: u64,
    pub dropped: u64,
}

/// Fire-and-forget broadcaster. Messages are queued and sent from a dedicated
/// thread; send failures are logged and counted, never returned.
#[derive(Debug)]
pub struct Broadcaster {
    queue: Arc<DropOldest<Vec<u8>>>,
    worker: Option<JoinHandle<SenderStats>>,
    dest: SocketAddr,
}

impl Broadcaster {
    pub fn new(dest: SocketAddr) -> Result<Self, UdpError> {
        let bind: SocketAddr = if dest.is_ipv4() { ([0, 0, 0, 0], 0).into() } else { (std::net::Ipv6Addr::UNSPECIFIED, 0).into() };
        let socket = UdpSocket::bind(bind)?;
        let queue: Arc<DropOldest<Vec<u8>>> = Arc::new(DropOldest::new(QUEUE_CAPACITY));
        let q = Arc::clone(&queue);
        let worker = thread::Builder::new().name("udp-sender".into()).spawn(move || {
            let mut stats = SenderStats::default();
            while let Some(buf) = q.pop() {
                match socket.send_to(&buf, dest) {
                    Ok(_) => stats.sent += 1,
                    Err(e) => {
                        stats.failed += 1;
                        warn!("send to {dest} failed: {e}");
                    }
                }
            }
            stats.dropped = q.dropped();
            stats
        })?;
        Ok(Self {
            queue,
            worker: Some(worker),
            dest,
        })
    }

    pub fn dest(&self) -> SocketAddr {
        self.dest
    }

    /// Encode and enqueue; only encoding errors are reported.
    pub fn send(&self, msg: &ActionMessage) -> Result<(), UdpError> {
        let buf = encode(msg)?;
        if self.queue.push(buf) {
            debug!("sender queue full, oldest message dropped");
        }
        Ok(())
    }

    /// Flush the queue and stop the sender thread.
    pub fn finish(mut self) -> SenderStats {
        self.shutdown()
    }

    fn shutdown(&mut self) -> SenderStats {
        self.queue.close();
        self.worker.take().map(|w| w.join().unwrap_or_default()).unwrap_or_default()
    }
}

impl Drop for Broadcaster {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Board state as written to `--board-out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardSnapshot {
    pub mode: PenMode,
    pub pos: [f64; 2],
    pub down: bool,
    /// Connected ink runs, each a list of points.
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub strokes: usize,
    pub history: Vec<PenMode>,
    pub messages: u64,
}

impl BoardSnapshot {
    pub fn of(ctl: &PenController, messages: u64) -> Self {
        let mut polylines: Vec<Vec<[f64; 2]>> = Vec::new();
        for seg in &ctl.pen.trace {
            match polylines.last_mut() {
                Some(line) if line.last() == Some(&seg[0]) => line.push(seg[1]),
                _ => polylines.push(vec![seg[0], seg[1]]),
            }
        }
        Self {
            mode: ctl.pen.mode,
            pos: ctl.pen.pos,
            down: ctl.pen.down,
            polylines,
            strokes: ctl.pen.strokes(),
            history: ctl.history.clone(),
            messages,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ListenOptions {
    /// Stop after this many accepted messages.
    pub max_messages: Option<u64>,
    /// Stop when nothing arrives for this long.
    pub idle_timeout: Option<Duration>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenStats {
    pub accepted: u64,
    pub rejected: u64,
}

/// Pen subscriber: one controller frame per accepted datagram.
#[derive(Debug)]
pub struct PenListener {
    socket: UdpSocket,
    pub controller: PenController,
}

impl PenListener {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, UdpError> {
        Ok(Self {
            socket: UdpSocket::bind(addr)?,
            controller: PenController::new(PenState::default()),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, UdpError> {
        Ok(self.socket.local_addr()?)
    }

    /// Receive until a stop condition holds. `on_change` sees the controller
    /// whenever the pen mode or trace changed.
    pub fn run(&mut self, opts: ListenOptions, mut on_change: impl FnMut(&PenController, u64)) -> Result<ListenStats, UdpError> {
        let mut stats = ListenStats::default();
        let mut buf = [0u8; 2048];
        let poll = Duration::from_millis(100);
        self.socket.set_read_timeout(Some(opts.idle_timeout.map_or(poll, |t| t.min(poll))))?;
        let mut last_rx = Instant::now();
        while opts.max_messages.map_or(true, |m| stats.accepted < m) {
            let n = match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => n,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    if opts.idle_timeout.is_some_and(|t| last_rx.elapsed() >= t) {
                        break;
                    }
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            last_rx = Instant::now();
            let msg = match decode(&buf[..n]) {
                Ok(m) => m,
                Err(e) => {
                    stats.rejected += 1;
                    warn!("ignoring datagram: {e}");
                    continue;
                }
            };
            stats.accepted += 1;
            let (mode, len) = (self.controller.pen.mode, self.controller.pen.trace.len());
            self.controller.on_frame(msg.confirmed_lower, msg.confirmed_upper);
            if self.controller.pen.mode != mode || self.controller.pen.trace.len() != len {
                on_change(&self.controller, stats.accepted);
            }
        }
        Ok(stats)
    }
}

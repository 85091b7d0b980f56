//! TCP ingress for keypoint producers.
//!
//! One producer connection is served at a time; a second connection made
//! while the first is active receives `ERR busy` and is closed. Decoded
//! frames go through a bounded queue, so a slow consumer pauses socket reads.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use crate::model::KeypointFrame;
use crate::wire::{decode_frame, replay_to_writer, ReplayFile, Speed};

pub const DEFAULT_INGRESS_PORT: u16 = 5556;
pub const QUEUE_CAPACITY: usize = 256;

const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum IngressError {
    #[error("cannot bind ingress listener: {0}")]
    BindFailure(#[source] io::Error),
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("ingress is busy with another producer")]
    Busy,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Default)]
pub struct IngressStats {
    pub frames: AtomicU64,
    pub malformed: AtomicU64,
    pub rejected_connections: AtomicU64,
    pub connections: AtomicU64,
}

impl IngressStats {
    pub fn frames(&self) -> u64 {
        self.frames.load(Ordering::Relaxed)
    }

    pub fn malformed(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }

    pub fn rejected(&self) -> u64 {
        self.rejected_connections.load(Ordering::Relaxed)
    }
}

/// Running listener. Dropping it stops accepting and closes the queue.
pub struct Ingress {
    addr: SocketAddr,
    stats: Arc<IngressStats>,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Ingress {
    /// Binds and starts the listener. Frames are available on the returned
    /// receiver in arrival order.
    pub fn bind(addr: impl ToSocketAddrs) -> Result<(Self, Receiver<KeypointFrame>), IngressError> {
        Self::bind_with_capacity(addr, QUEUE_CAPACITY)
    }

    pub fn bind_with_capacity(
        addr: impl ToSocketAddrs,
        capacity: usize,
    ) -> Result<(Self, Receiver<KeypointFrame>), IngressError> {
        let listener = TcpListener::bind(addr).map_err(IngressError::BindFailure)?;
        listener
            .set_nonblocking(true)
            .map_err(IngressError::BindFailure)?;
        let addr = listener.local_addr().map_err(IngressError::BindFailure)?;
        let (tx, rx) = mpsc::sync_channel(capacity);
        let stats = Arc::new(IngressStats::default());
        let shutdown = Arc::new(AtomicBool::new(false));

        let accept_thread = {
            let stats = Arc::clone(&stats);
            let shutdown = Arc::clone(&shutdown);
            thread::Builder::new()
                .name("ingress-accept".into())
                .spawn(move || accept_loop(listener, tx, stats, shutdown))?
        };
        log::info!("ingress listening on {addr}");
        Ok((
            Self {
                addr,
                stats,
                shutdown,
                accept_thread: Some(accept_thread),
            },
            rx,
        ))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> Arc<IngressStats> {
        Arc::clone(&self.stats)
    }

    /// Stops accepting, ends the active connection and waits for the
    /// listener threads. Frames already queued stay readable.
    pub fn shutdown(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Ingress {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Runs a listener on `addr`, handing every frame to `sink` until the
/// producer side is shut down via `stop`.
pub fn listen_ingress<F>(
    addr: impl ToSocketAddrs,
    stop: Arc<AtomicBool>,
    mut sink: F,
) -> Result<Arc<IngressStats>, IngressError>
where
    F: FnMut(KeypointFrame),
{
    let (mut ingress, rx) = Ingress::bind(addr)?;
    let stats = ingress.stats();
    while !stop.load(Ordering::SeqCst) {
        match rx.recv_timeout(POLL) {
            Ok(f) => sink(f),
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    ingress.shutdown();
    for f in rx.try_iter() {
        sink(f);
    }
    Ok(stats)
}

fn accept_loop(
    listener: TcpListener,
    tx: SyncSender<KeypointFrame>,
    stats: Arc<IngressStats>,
    shutdown: Arc<AtomicBool>,
) {
    let active = Arc::new(AtomicBool::new(false));
    let mut reader: Option<JoinHandle<()>> = None;
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut stream, peer)) => {
                if active.load(Ordering::SeqCst) {
                    log::warn!("rejecting producer {peer}: another producer is active");
                    stats.rejected_connections.fetch_add(1, Ordering::Relaxed);
                    let _ = stream.write_all(b"ERR busy\n");
                    let _ = stream.shutdown(std::net::Shutdown::Both);
                    continue;
                }
                if let Some(h) = reader.take() {
                    let _ = h.join();
                }
                log::info!("producer connected from {peer}");
                stats.connections.fetch_add(1, Ordering::Relaxed);
                active.store(true, Ordering::SeqCst);
                let tx = tx.clone();
                let stats = Arc::clone(&stats);
                let shutdown = Arc::clone(&shutdown);
                let active = Arc::clone(&active);
                reader = thread::Builder::new()
                    .name("ingress-reader".into())
                    .spawn(move || {
                        if let Err(e) = read_producer(stream, &tx, &stats, &shutdown) {
                            log::warn!("producer {peer} read error: {e}");
                        }
                        log::info!("producer {peer} disconnected");
                        active.store(false, Ordering::SeqCst);
                    })
                    .ok();
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    if let Some(h) = reader {
        let _ = h.join();
    }
}

fn read_producer(
    stream: TcpStream,
    tx: &SyncSender<KeypointFrame>,
    stats: &IngressStats,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::with_capacity(2048);
    let mut line_no = 0u64;
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => {
                if !buf.is_empty() {
                    line_no += 1;
                    handle_line(&buf, line_no, tx, stats, shutdown);
                }
                return Ok(());
            }
            Ok(_) => {
                if buf.last() != Some(&b'\n') {
                    // EOF without newline; the next read returns 0.
                    continue;
                }
                line_no += 1;
                if !handle_line(&buf, line_no, tx, stats, shutdown) {
                    return Ok(());
                }
                buf.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

/// Returns false once the consumer side has gone away.
fn handle_line(
    buf: &[u8],
    line_no: u64,
    tx: &SyncSender<KeypointFrame>,
    stats: &IngressStats,
    shutdown: &AtomicBool,
) -> bool {
    let text = match std::str::from_utf8(buf) {
        Ok(t) => t.trim_end_matches(['\n', '\r']),
        Err(_) => {
            stats.malformed.fetch_add(1, Ordering::Relaxed);
            log::warn!("ingress line {line_no}: not UTF-8, skipped");
            return true;
        }
    };
    if text.trim().is_empty() || text.starts_with('#') {
        return true;
    }
    match decode_frame(text) {
        Ok(mut frame) => loop {
            match tx.try_send(frame) {
                Ok(()) => {
                    stats.frames.fetch_add(1, Ordering::Relaxed);
                    return true;
                }
                Err(TrySendError::Full(f)) => {
                    if shutdown.load(Ordering::SeqCst) {
                        return false;
                    }
                    frame = f;
                    thread::sleep(Duration::from_micros(200));
                }
                Err(TrySendError::Disconnected(_)) => return false,
            }
        },
        Err(e) => {
            stats.malformed.fetch_add(1, Ordering::Relaxed);
            log::warn!("ingress line {line_no}: {e}, skipped");
            true
        }
    }
}

/// Connects to an ingress listener and streams a replay file into it.
pub fn send_replay(
    addr: impl ToSocketAddrs + std::fmt::Display,
    file: &ReplayFile,
    speed: Speed,
) -> Result<usize, IngressError> {
    let stream = TcpStream::connect(&addr).map_err(|source| IngressError::Connect {
        addr: addr.to_string(),
        source,
    })?;
    stream.set_nodelay(true)?;
    let n = replay_to_writer(file, speed, &stream)?;
    stream.shutdown(std::net::Shutdown::Write)?;
    // Wait for the listener to finish reading; a rejected connection sees
    // "ERR busy" here.
    let mut reply = String::new();
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let _ = BufReader::new(&stream).read_line(&mut reply);
    if reply.starts_with("ERR busy") {
        return Err(IngressError::Busy);
    }
    Ok(n)
}

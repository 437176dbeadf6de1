//! AMS/TCP front end of the simulated PLC.
//!
//! Threads: one acceptor, one executor (unless the virtual clock is stepped
//! manually), and a reader plus a writer per connection. All PLC state sits
//! behind one mutex; a request is applied between two cycles, never in the
//! middle of one.
//!
//! Every frame for a connection goes through its [`Outbox`], in the order it
//! was produced under the PLC lock. Responses are never dropped. When the
//! notification backlog reaches the configured capacity the oldest
//! notification frame is discarded and counted. Under the virtual clock
//! the executor instead waits for the backlog to drain, since logical time
//! does not advance while it waits.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufReader, Read, Write};
use std::net::{Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, MutexGuard};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::codec::{
    decode_frame_body, encode_frame, frame_length, AmsAddress, AmsHeader, AmsNetId, CommandId,
    Payload, StateFlags, AMS_TCP_HEADER_LEN, AMS_TCP_PORT,
};
use crate::time::{now_ticks, VIRTUAL_EPOCH_TICKS};

use super::config::PlcConfig;
use super::plc::{ConnId, OutgoingStream, Plc, PlcCounters};

/// TwinCAT 3 PLC runtime port.
pub const DEFAULT_ADS_PORT: u16 = 851;
pub const DEFAULT_OUTBOX_CAPACITY: usize = 65536;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClockMode {
    /// Cycles follow the wall clock, best effort.
    Real,
    /// Logical time advances one cycle per iteration without sleeping.
    Virtual,
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub net_id: AmsNetId,
    pub ads_port: u16,
    pub plc: PlcConfig,
    pub clock: ClockMode,
    /// Start the executor thread. With the virtual clock and `autostart`
    /// off, cycles run only through [`PlcServer::run_cycles`].
    pub autostart: bool,
    /// Notification frames buffered per connection before the oldest is
    /// dropped.
    pub outbox_capacity: usize,
}

impl ServerConfig {
    pub fn new(plc: PlcConfig) -> Self {
        ServerConfig {
            bind: SocketAddr::from((Ipv4Addr::UNSPECIFIED, AMS_TCP_PORT)),
            net_id: AmsNetId::local(),
            ads_port: DEFAULT_ADS_PORT,
            plc,
            clock: ClockMode::Real,
            autostart: true,
            outbox_capacity: DEFAULT_OUTBOX_CAPACITY,
        }
    }

    /// Loopback on an ephemeral port.
    pub fn loopback(plc: PlcConfig) -> Self {
        ServerConfig {
            bind: SocketAddr::from((Ipv4Addr::LOCALHOST, 0)),
            ..Self::new(plc)
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("binding listener: {0}")]
    Bind(#[source] io::Error),
    #[error("manual stepping needs the virtual clock")]
    NotVirtual,
}

/// Snapshot of server-side counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub counters: PlcCounters,
    pub connections: usize,
    /// Real clock only: worst observed lateness of a cycle start.
    pub max_lateness: Duration,
    /// Real clock only: mean lateness over all cycles.
    pub mean_lateness: Duration,
}

enum Outgoing {
    Response(Vec<u8>),
    Notification { bytes: Vec<u8>, samples: usize },
}

#[derive(Default)]
struct OutboxState {
    queue: VecDeque<Outgoing>,
    notifications: usize,
    /// Someone is writing to the socket; whatever is queued goes after it.
    writing: bool,
    closed: bool,
}

/// Ordered outbound frame queue of one connection.
struct Outbox {
    state: Mutex<OutboxState>,
    ready: Condvar,
    drained: Condvar,
    capacity: usize,
}

impl Outbox {
    fn new(capacity: usize) -> Self {
        Outbox {
            state: Mutex::new(OutboxState::default()),
            ready: Condvar::new(),
            drained: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    fn push_response(&self, bytes: Vec<u8>) {
        let mut st = self.state.lock();
        if st.closed {
            return;
        }
        st.queue.push_back(Outgoing::Response(bytes));
        self.ready.notify_one();
    }

    /// Returns (streams, samples) dropped to make room.
    fn push_notification(&self, bytes: Vec<u8>, samples: usize) -> (u64, u64) {
        let mut st = self.state.lock();
        if st.closed {
            return (0, 0);
        }
        let mut dropped = (0, 0);
        while st.notifications >= self.capacity {
            let pos = st
                .queue
                .iter()
                .position(|o| matches!(o, Outgoing::Notification { .. }))
                .expect("counted notifications are queued");
            if let Some(Outgoing::Notification { samples, .. }) = st.queue.remove(pos) {
                dropped.0 += 1;
                dropped.1 += samples as u64;
            }
            st.notifications -= 1;
        }
        st.queue.push_back(Outgoing::Notification { bytes, samples });
        st.notifications += 1;
        self.ready.notify_one();
        dropped
    }

    /// Take the socket for one frame if nothing is queued or being written.
    /// The caller writes it and then calls [`Outbox::finish_write`].
    fn claim_direct(&self) -> bool {
        let mut st = self.state.lock();
        if st.closed || st.writing || !st.queue.is_empty() {
            return false;
        }
        st.writing = true;
        true
    }

    fn finish_write(&self) {
        let mut st = self.state.lock();
        st.writing = false;
        if !st.queue.is_empty() {
            self.ready.notify_one();
        }
    }

    /// Block until fewer than `limit` notification frames are queued.
    fn wait_below(&self, limit: usize) {
        let mut st = self.state.lock();
        while !st.closed && st.notifications >= limit {
            self.drained.wait(&mut st);
        }
    }

    /// Next batch of bytes to write, or `None` once closed. Holds the
    /// socket until [`Outbox::finish_write`].
    fn take_batch(&self, max_bytes: usize) -> Option<Vec<u8>> {
        let mut st = self.state.lock();
        while st.queue.is_empty() || st.writing {
            if st.closed {
                return None;
            }
            self.ready.wait(&mut st);
        }
        let mut batch = Vec::new();
        while let Some(item) = st.queue.pop_front() {
            match item {
                Outgoing::Response(b) => batch.extend_from_slice(&b),
                Outgoing::Notification { bytes, .. } => {
                    st.notifications -= 1;
                    batch.extend_from_slice(&bytes);
                }
            }
            if batch.len() >= max_bytes {
                break;
            }
        }
        st.writing = true;
        self.drained.notify_all();
        Some(batch)
    }

    fn close(&self) {
        let mut st = self.state.lock();
        st.closed = true;
        st.queue.clear();
        st.notifications = 0;
        self.ready.notify_all();
        self.drained.notify_all();
    }
}

struct ConnEntry {
    outbox: Arc<Outbox>,
    socket: TcpStream,
}

struct Shared {
    plc: Mutex<Plc>,
    conns: Mutex<BTreeMap<ConnId, ConnEntry>>,
    shutdown: AtomicBool,
    clock: ClockMode,
    address: AmsAddress,
    outbox_capacity: usize,
    start_ticks: u64,
    lateness_max_ns: AtomicU64,
    lateness_sum_ns: AtomicU64,
    timed_cycles: AtomicU64,
}

impl Shared {
    /// Queue notification frames. Must be called with the PLC lock held so
    /// frames stay ordered with responses.
    fn dispatch(&self, plc: &mut Plc, streams: Vec<OutgoingStream>) {
        if streams.is_empty() {
            return;
        }
        let conns = self.conns.lock();
        for out in streams {
            let Some(entry) = conns.get(&out.conn) else { continue };
            let samples = out.stream.sample_count();
            let header = AmsHeader {
                target: out.client,
                source: self.address,
                command: CommandId::DeviceNotification,
                state_flags: StateFlags::request(),
                payload_length: 0,
                error_code: 0,
                invoke_id: 0,
            };
            let bytes = encode_frame(&header, &Payload::DeviceNotification(out.stream))
                .expect("notification frame is well-formed");
            let (streams, dropped) = entry.outbox.push_notification(bytes, samples);
            if streams > 0 {
                let c = plc.counters_mut();
                c.dropped_streams += streams;
                c.dropped_samples += dropped;
                // Log the first drop and then at powers of two.
                if c.dropped_streams.is_power_of_two() || c.dropped_streams == streams {
                    warn!(
                        event = "notification_drop",
                        conn = out.conn,
                        dropped_streams = c.dropped_streams,
                        dropped_samples = c.dropped_samples
                    );
                }
            }
        }
    }

    fn virtual_cycle(&self) {
        let limit = (self.outbox_capacity / 2).max(1);
        let outboxes: Vec<Arc<Outbox>> = self.conns.lock().values().map(|c| c.outbox.clone()).collect();
        for ob in outboxes {
            ob.wait_below(limit);
        }
        let mut plc = self.plc.lock();
        let now = self.start_ticks + (plc.counters().cycles + 1) * plc.cycle_ticks();
        let streams = plc.run_cycle(now);
        self.dispatch(&mut plc, streams);
        MutexGuard::unlock_fair(plc);
    }

    fn run_virtual(&self) {
        while !self.shutdown.load(Ordering::Relaxed) {
            self.virtual_cycle();
        }
    }

    fn run_real(&self) {
        let (cycle, cycle_ticks) = {
            let plc = self.plc.lock();
            (plc.task().cycle_time, plc.cycle_ticks())
        };
        let cycle_ns = cycle.as_nanos() as u64;
        let start = Instant::now();
        let mut k: u64 = 0;
        while !self.shutdown.load(Ordering::Relaxed) {
            k += 1;
            let deadline = start + Duration::from_nanos(cycle_ns * k);
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            }
            let late = Instant::now().saturating_duration_since(deadline).as_nanos() as u64;
            self.lateness_max_ns.fetch_max(late, Ordering::Relaxed);
            self.lateness_sum_ns.fetch_add(late, Ordering::Relaxed);
            self.timed_cycles.fetch_add(1, Ordering::Relaxed);

            let mut plc = self.plc.lock();
            if late > cycle_ns {
                plc.counters_mut().overruns += 1;
            }
            let streams = plc.run_cycle(self.start_ticks + k * cycle_ticks);
            self.dispatch(&mut plc, streams);
            MutexGuard::unlock_fair(plc);
        }
    }
}

/// A running simulated PLC. Dropping it shuts the server down.
pub struct PlcServer {
    shared: Arc<Shared>,
    local_addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl PlcServer {
    pub fn spawn(config: ServerConfig) -> Result<PlcServer, ServerError> {
        let listener = TcpListener::bind(config.bind).map_err(ServerError::Bind)?;
        let local_addr = listener.local_addr().map_err(ServerError::Bind)?;
        let start_ticks = match config.clock {
            ClockMode::Real => now_ticks(),
            ClockMode::Virtual => VIRTUAL_EPOCH_TICKS,
        };
        let address = AmsAddress::new(config.net_id, config.ads_port);
        let shared = Arc::new(Shared {
            plc: Mutex::new(Plc::new(config.plc, config.ads_port, start_ticks)),
            conns: Mutex::new(BTreeMap::new()),
            shutdown: AtomicBool::new(false),
            clock: config.clock,
            address,
            outbox_capacity: config.outbox_capacity,
            start_ticks,
            lateness_max_ns: AtomicU64::new(0),
            lateness_sum_ns: AtomicU64::new(0),
            timed_cycles: AtomicU64::new(0),
        });
        info!(event = "listen", addr = %local_addr, ams = %address, clock = ?config.clock);

        let mut threads = Vec::new();
        let sh = shared.clone();
        threads.push(
            thread::Builder::new()
                .name("plc-accept".into())
                .spawn(move || accept_loop(sh, listener))
                .expect("spawn acceptor"),
        );
        if config.autostart {
            let sh = shared.clone();
            threads.push(
                thread::Builder::new()
                    .name("plc-task".into())
                    .spawn(move || match sh.clock {
                        ClockMode::Real => sh.run_real(),
                        ClockMode::Virtual => sh.run_virtual(),
                    })
                    .expect("spawn executor"),
            );
        }
        Ok(PlcServer {
            shared,
            local_addr,
            threads,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// The AMS address of the PLC runtime.
    pub fn ams_address(&self) -> AmsAddress {
        self.shared.address
    }

    /// Run `n` cycles on the calling thread. Virtual clock only.
    pub fn run_cycles(&self, n: u64) -> Result<(), ServerError> {
        if self.shared.clock != ClockMode::Virtual {
            return Err(ServerError::NotVirtual);
        }
        for _ in 0..n {
            self.shared.virtual_cycle();
        }
        Ok(())
    }

    /// Direct access to PLC state, serialized with cycles and requests.
    pub fn with_plc<R>(&self, f: impl FnOnce(&mut Plc) -> R) -> R {
        let mut plc = self.shared.plc.lock();
        f(&mut plc)
    }

    /// Invalidate all symbol handles, as a PLC restart does.
    pub fn invalidate_symbol_handles(&self) {
        self.with_plc(Plc::reset_symbol_handles);
    }

    pub fn stats(&self) -> ServerStats {
        let counters = self.shared.plc.lock().counters();
        let cycles = self.shared.timed_cycles.load(Ordering::Relaxed);
        let sum = self.shared.lateness_sum_ns.load(Ordering::Relaxed);
        ServerStats {
            counters,
            connections: self.shared.conns.lock().len(),
            max_lateness: Duration::from_nanos(self.shared.lateness_max_ns.load(Ordering::Relaxed)),
            mean_lateness: Duration::from_nanos(sum.checked_div(cycles).unwrap_or(0)),
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the acceptor.
        let mut wake = self.local_addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(Ipv4Addr::LOCALHOST.into());
        }
        let _ = TcpStream::connect_timeout(&wake, Duration::from_secs(1));
        for entry in self.shared.conns.lock().values() {
            entry.outbox.close();
            let _ = entry.socket.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        info!(event = "shutdown", addr = %self.local_addr);
    }
}

impl Drop for PlcServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!(event = "accept_error", error = %e);
                continue;
            }
        };
        if let Err(e) = start_connection(&shared, stream) {
            warn!(event = "connection_setup_failed", error = %e);
        }
    }
}

fn start_connection(shared: &Arc<Shared>, stream: TcpStream) -> io::Result<()> {
    let peer = stream.peer_addr()?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let writer = stream.try_clone()?;
    let outbox = Arc::new(Outbox::new(shared.outbox_capacity));
    let conn = {
        let mut plc = shared.plc.lock();
        let conn = plc.open_connection();
        shared.conns.lock().insert(
            conn,
            ConnEntry {
                outbox: outbox.clone(),
                socket: stream,
            },
        );
        conn
    };
    info!(event = "connect", conn, peer = %peer);

    let ob = outbox.clone();
    thread::Builder::new()
        .name(format!("plc-tx-{conn}"))
        .spawn(move || write_loop(conn, writer, ob))?;
    let sh = shared.clone();
    thread::Builder::new()
        .name(format!("plc-rx-{conn}"))
        .spawn(move || {
            let reason = read_loop(&sh, conn, reader, &outbox);
            let orphaned = {
                let mut plc = sh.plc.lock();
                if let Some(e) = sh.conns.lock().remove(&conn) {
                    let _ = e.socket.shutdown(Shutdown::Both);
                }
                plc.close_connection(conn)
            };
            outbox.close();
            info!(event = "disconnect", conn, reason = %reason, registrations_dropped = orphaned);
        })?;
    Ok(())
}

fn read_loop(shared: &Shared, conn: ConnId, stream: TcpStream, outbox: &Outbox) -> String {
    let mut rx = BufReader::with_capacity(64 * 1024, stream);
    let mut prefix = [0u8; AMS_TCP_HEADER_LEN];
    let mut body = Vec::new();
    loop {
        if let Err(e) = rx.read_exact(&mut prefix) {
            return if e.kind() == io::ErrorKind::UnexpectedEof {
                "peer closed".into()
            } else {
                format!("read error: {e}")
            };
        }
        let total = match frame_length(&prefix) {
            Ok(Some(total)) => total,
            Ok(None) => unreachable!("prefix is complete"),
            Err(e) => {
                warn!(event = "protocol_error", conn, error = %e);
                return format!("protocol error: {e}");
            }
        };
        body.resize(total - AMS_TCP_HEADER_LEN, 0);
        if let Err(e) = rx.read_exact(&mut body) {
            return format!("truncated frame: {e}");
        }
        let frame = match decode_frame_body(&body) {
            Ok(f) => f,
            Err(e) => {
                warn!(event = "protocol_error", conn, error = %e);
                return format!("protocol error: {e}");
            }
        };
        let mut plc = shared.plc.lock();
        let Some((header, payload)) = plc.handle_request(conn, &frame.header, &frame.payload) else {
            debug!(event = "ignored_frame", conn, command = %frame.header.command);
            continue;
        };
        let bytes = encode_frame(&header, &payload).expect("response is well-formed");
        // Claimed under the PLC lock, so frames queued later still follow.
        if !outbox.claim_direct() {
            outbox.push_response(bytes);
            continue;
        }
        drop(plc);
        let written = rx.get_ref().write_all(&bytes);
        outbox.finish_write();
        if let Err(e) = written {
            return format!("write error: {e}");
        }
    }
}

fn write_loop(conn: ConnId, mut stream: TcpStream, outbox: Arc<Outbox>) {
    while let Some(batch) = outbox.take_batch(256 * 1024) {
        let written = stream.write_all(&batch);
        outbox.finish_write();
        if let Err(e) = written {
            debug!(event = "write_error", conn, error = %e);
            outbox.close();
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
    }
}

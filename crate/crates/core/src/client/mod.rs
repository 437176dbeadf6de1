//! ADS client session.
//!
//! One TCP connection per [`Session`]. Requests from any number of threads
//! share it; a single receive thread matches responses to callers by invoke
//! id and hands notification samples to per-subscription dispatch workers.

mod cache;
mod subscription;

pub use cache::{CacheStats, CachedHandle, HandleCache};
pub use subscription::{Listener, Subscription, SubscriptionStats};

use std::collections::HashMap;
use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::codec::{
    decode_frame_body, encode_frame, frame_length, index_group, AdsCode, AmsAddress, AmsHeader,
    AmsNetId, CommandId, DeviceInfo, EncodeError, NotificationAttrib, Payload, ProtocolError,
    AMS_TCP_HEADER_LEN,
};
use crate::types::{PlcType, TypeError, TypedValue};

use subscription::{start_dispatch, SubShared};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_DISPATCH_QUEUE: usize = 65536;
pub const DEFAULT_SOURCE_PORT: u16 = 32905;

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub server_addr: SocketAddr,
    pub target: AmsAddress,
    pub source: AmsAddress,
    pub request_timeout: Duration,
    /// Per-subscription bound on samples waiting for the listener.
    pub dispatch_queue: usize,
}

impl ClientConfig {
    pub fn new(server_addr: SocketAddr, target: AmsAddress) -> Self {
        ClientConfig {
            server_addr,
            target,
            source: AmsAddress::new(AmsNetId::local(), DEFAULT_SOURCE_PORT),
            request_timeout: DEFAULT_TIMEOUT,
            dispatch_queue: DEFAULT_DISPATCH_QUEUE,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connecting to {addr}: {source}")]
    Connect {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("invalid client config: {0}")]
    Config(&'static str),
    #[error("request {invoke_id} timed out after {timeout:?}")]
    Timeout { invoke_id: u32, timeout: Duration },
    #[error("connection closed")]
    Disconnected,
    #[error("{command} failed: ADS error {code}")]
    Ads { command: CommandId, code: AdsCode },
    #[error("{0:?} is not a request")]
    NotARequest(Option<CommandId>),
    #[error("response to {sent} carried {received:?}")]
    UnexpectedResponse {
        sent: CommandId,
        received: Option<CommandId>,
    },
    #[error("{symbol}: type needs {expected} bytes, symbol has {actual}")]
    SizeMismatch {
        symbol: String,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("socket: {0}")]
    Io(#[from] io::Error),
}

impl ClientError {
    pub fn ads_code(&self) -> Option<AdsCode> {
        match self {
            ClientError::Ads { code, .. } => Some(*code),
            _ => None,
        }
    }

    /// Codes after which a cached symbol handle must not be reused.
    fn is_stale_handle(&self) -> bool {
        matches!(
            self.ads_code(),
            Some(AdsCode::INVALID_INDEX_OFFSET) | Some(AdsCode::SYMBOL_NOT_FOUND)
        )
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

/// Where time went across requests, in nanoseconds.
///
/// `encode` and `decode` cover the codec calls only. `wire_wait` runs from
/// the end of the socket write to the moment the receive thread routes the
/// response, minus the decode time inside that window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Attribution {
    pub requests: u64,
    pub encode_ns: u64,
    pub decode_ns: u64,
    pub wire_wait_ns: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub requests: u64,
    pub max_in_flight: usize,
    pub notification_frames: u64,
    pub notification_samples: u64,
    /// Samples for handles with no local subscription.
    pub orphan_samples: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    encode_ns: AtomicU64,
    decode_ns: AtomicU64,
    wire_ns: AtomicU64,
    timed: AtomicU64,
    in_flight_max: AtomicUsize,
    notification_frames: AtomicU64,
    notification_samples: AtomicU64,
    orphan_samples: AtomicU64,
}

struct Received {
    header_error: u32,
    payload: Payload,
    decode_ns: u64,
    routed_at: Instant,
}

struct Pending {
    reply: SyncSender<Result<Received>>,
    /// Subscription to register when an AddDeviceNotification succeeds, so
    /// the dispatch entry exists before the next frame is read.
    install: Option<Arc<SubShared>>,
}

#[derive(Default)]
struct PendingTable {
    map: HashMap<u32, Pending>,
    closed: bool,
}

pub(crate) struct Inner {
    config: ClientConfig,
    socket: TcpStream,
    writer: Mutex<TcpStream>,
    next_invoke: AtomicU32,
    pending: Mutex<PendingTable>,
    pub(crate) subs: Mutex<HashMap<u32, Arc<SubShared>>>,
    counters: Counters,
}

impl Inner {
    pub(crate) fn request(&self, payload: Payload) -> Result<Payload> {
        self.exchange(payload, None)
    }

    fn next_invoke_id(&self) -> u32 {
        loop {
            let id = self.next_invoke.fetch_add(1, Ordering::Relaxed);
            if id != 0 {
                return id;
            }
        }
    }

    fn exchange(&self, payload: Payload, install: Option<Arc<SubShared>>) -> Result<Payload> {
        let command = match payload.command() {
            Some(c) if !payload.is_response() => c,
            other => return Err(ClientError::NotARequest(other)),
        };
        let invoke_id = self.next_invoke_id();

        let t0 = Instant::now();
        let header = AmsHeader::request(self.config.target, self.config.source, command, invoke_id);
        let bytes = encode_frame(&header, &payload)?;
        let encode_ns = t0.elapsed().as_nanos() as u64;

        let (tx, rx) = sync_channel(1);
        {
            let mut pending = self.pending.lock();
            if pending.closed {
                return Err(ClientError::Disconnected);
            }
            pending.map.insert(invoke_id, Pending { reply: tx, install });
            self.counters.in_flight_max.fetch_max(pending.map.len(), Ordering::Relaxed);
        }
        self.counters.requests.fetch_add(1, Ordering::Relaxed);

        // On loopback the reply can arrive before write_all returns.
        let sent_at = Instant::now();
        if let Err(e) = self.writer.lock().write_all(&bytes) {
            self.pending.lock().map.remove(&invoke_id);
            let _ = self.socket.shutdown(Shutdown::Both);
            return Err(ClientError::Io(e));
        }

        let received = match rx.recv_timeout(self.config.request_timeout) {
            Ok(r) => r?,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().map.remove(&invoke_id);
                // The reply may have raced the removal.
                return match rx.try_recv() {
                    Ok(r) => self.finish(command, r?, encode_ns, sent_at),
                    Err(_) => Err(ClientError::Timeout {
                        invoke_id,
                        timeout: self.config.request_timeout,
                    }),
                };
            }
            Err(RecvTimeoutError::Disconnected) => return Err(ClientError::Disconnected),
        };
        self.finish(command, received, encode_ns, sent_at)
    }

    fn finish(&self, command: CommandId, r: Received, encode_ns: u64, sent_at: Instant) -> Result<Payload> {
        let window = r.routed_at.saturating_duration_since(sent_at).as_nanos() as u64;
        let c = &self.counters;
        c.encode_ns.fetch_add(encode_ns, Ordering::Relaxed);
        c.decode_ns.fetch_add(r.decode_ns, Ordering::Relaxed);
        c.wire_ns.fetch_add(window.saturating_sub(r.decode_ns), Ordering::Relaxed);
        c.timed.fetch_add(1, Ordering::Relaxed);

        if r.header_error != 0 {
            return Err(ClientError::Ads {
                command,
                code: AdsCode(r.header_error),
            });
        }
        if r.payload.command() != Some(command) {
            return Err(ClientError::UnexpectedResponse {
                sent: command,
                received: r.payload.command(),
            });
        }
        match r.payload.result() {
            Some(code) if !code.is_ok() => Err(ClientError::Ads { command, code }),
            _ => Ok(r.payload),
        }
    }

    fn fail_pending(&self) {
        let drained: Vec<Pending> = {
            let mut pending = self.pending.lock();
            pending.closed = true;
            pending.map.drain().map(|(_, p)| p).collect()
        };
        for p in drained {
            let _ = p.reply.try_send(Err(ClientError::Disconnected));
        }
    }

    fn route_notification(&self, payload: Payload) {
        let Payload::DeviceNotification(stream) = payload else { return };
        let c = &self.counters;
        c.notification_frames.fetch_add(1, Ordering::Relaxed);
        let subs = self.subs.lock();
        for stamp in stream.stamps {
            for sample in stamp.samples {
                c.notification_samples.fetch_add(1, Ordering::Relaxed);
                match subs.get(&sample.handle) {
                    Some(sub) => sub.enqueue(stamp.timestamp, sample.data),
                    None => {
                        c.orphan_samples.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
        }
    }

    fn route_response(&self, header: &AmsHeader, payload: Payload, decode_ns: u64) {
        let Some(entry) = self.pending.lock().map.remove(&header.invoke_id) else {
            debug!(event = "unmatched_response", invoke_id = header.invoke_id, command = %header.command);
            return;
        };
        if let (Some(sub), Payload::AddNotificationResponse { result, handle }) = (&entry.install, &payload) {
            if header.error_code == 0 && *result == 0 {
                sub.handle.store(*handle, Ordering::Relaxed);
                self.subs.lock().insert(*handle, sub.clone());
            }
        }
        let _ = entry.reply.try_send(Ok(Received {
            header_error: header.error_code,
            payload,
            decode_ns,
            routed_at: Instant::now(),
        }));
    }
}

fn receive_loop(inner: Arc<Inner>, stream: TcpStream) {
    let mut rx = BufReader::with_capacity(256 * 1024, stream);
    let mut prefix = [0u8; AMS_TCP_HEADER_LEN];
    let mut body = Vec::new();
    let reason: String = loop {
        if let Err(e) = rx.read_exact(&mut prefix) {
            break match e.kind() {
                io::ErrorKind::UnexpectedEof => "server closed".into(),
                _ => format!("read error: {e}"),
            };
        }
        let total = match frame_length(&prefix) {
            Ok(Some(n)) => n,
            Ok(None) => unreachable!("prefix is complete"),
            Err(e) => break protocol_failure(e),
        };
        body.resize(total - AMS_TCP_HEADER_LEN, 0);
        if let Err(e) = rx.read_exact(&mut body) {
            break format!("truncated frame: {e}");
        }
        let t0 = Instant::now();
        let frame = match decode_frame_body(&body) {
            Ok(f) => f,
            Err(e) => break protocol_failure(e),
        };
        let decode_ns = t0.elapsed().as_nanos() as u64;
        if frame.header.state_flags.is_response() {
            inner.route_response(&frame.header, frame.payload, decode_ns);
        } else if frame.header.command == CommandId::DeviceNotification {
            inner.route_notification(frame.payload);
        } else {
            debug!(event = "unexpected_request", command = %frame.header.command);
        }
    };
    let _ = inner.socket.shutdown(Shutdown::Both);
    inner.fail_pending();
    debug!(event = "receive_loop_exit", reason = %reason);
}

fn protocol_failure(e: ProtocolError) -> String {
    warn!(event = "protocol_error", error = %e);
    format!("protocol error: {e}")
}

/// A connection to one ADS target.
pub struct Session {
    inner: Arc<Inner>,
    cache: HandleCache,
    receiver: Option<JoinHandle<()>>,
}

impl Session {
    pub fn connect(config: ClientConfig) -> Result<Session> {
        if config.request_timeout.is_zero() {
            return Err(ClientError::Config("request timeout must be positive"));
        }
        let addr = config.server_addr;
        let stream = TcpStream::connect_timeout(&addr, config.request_timeout)
            .map_err(|source| ClientError::Connect { addr, source })?;
        stream.set_nodelay(true)?;
        let inner = Arc::new(Inner {
            socket: stream.try_clone()?,
            writer: Mutex::new(stream.try_clone()?),
            config,
            next_invoke: AtomicU32::new(1),
            pending: Mutex::new(PendingTable::default()),
            subs: Mutex::new(HashMap::new()),
            counters: Counters::default(),
        });
        let rx_inner = inner.clone();
        let receiver = thread::Builder::new()
            .name("ads-recv".into())
            .spawn(move || receive_loop(rx_inner, stream))?;
        info!(event = "session_open", server = %addr, target = %inner.config.target);
        Ok(Session {
            inner,
            cache: HandleCache::new(),
            receiver: Some(receiver),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.inner.config
    }

    pub fn is_connected(&self) -> bool {
        !self.inner.pending.lock().closed
    }

    /// Send one request and wait for its response. Nonzero AMS error codes
    /// and nonzero payload results come back as [`ClientError::Ads`].
    pub fn request(&self, payload: Payload) -> Result<Payload> {
        self.inner.request(payload)
    }

    pub fn read_device_info(&self) -> Result<DeviceInfo> {
        match self.request(Payload::ReadDeviceInfoRequest)? {
            Payload::ReadDeviceInfoResponse { info, .. } => Ok(info),
            _ => unreachable!("command checked by request"),
        }
    }

    /// (ADS state, device state).
    pub fn read_state(&self) -> Result<(u16, u16)> {
        match self.request(Payload::ReadStateRequest)? {
            Payload::ReadStateResponse {
                ads_state,
                device_state,
                ..
            } => Ok((ads_state, device_state)),
            _ => unreachable!("command checked by request"),
        }
    }

    pub fn write_control(&self, ads_state: u16, device_state: u16) -> Result<()> {
        self.request(Payload::WriteControlRequest {
            ads_state,
            device_state,
            data: Vec::new(),
        })?;
        Ok(())
    }

    pub fn read_raw(&self, index_group: u32, index_offset: u32, length: u32) -> Result<Vec<u8>> {
        match self.request(Payload::ReadRequest {
            index_group,
            index_offset,
            length,
        })? {
            Payload::ReadResponse { data, .. } => Ok(data),
            _ => unreachable!("command checked by request"),
        }
    }

    pub fn write_raw(&self, index_group: u32, index_offset: u32, data: Vec<u8>) -> Result<()> {
        self.request(Payload::WriteRequest {
            index_group,
            index_offset,
            data,
        })?;
        Ok(())
    }

    pub fn read_write_raw(
        &self,
        index_group: u32,
        index_offset: u32,
        read_length: u32,
        write_data: Vec<u8>,
    ) -> Result<Vec<u8>> {
        match self.request(Payload::ReadWriteRequest {
            index_group,
            index_offset,
            read_length,
            write_data,
        })? {
            Payload::ReadWriteResponse { data, .. } => Ok(data),
            _ => unreachable!("command checked by request"),
        }
    }

    /// Symbol handle for `name`, from the cache or by one lookup request.
    pub fn resolve_handle(&self, name: &str) -> Result<u32> {
        if let Some(e) = self.cache.get(name) {
            return Ok(e.handle);
        }
        let data = self.read_write_raw(index_group::SYM_HANDLE_BY_NAME, 0, 4, name.as_bytes().to_vec())?;
        let handle: [u8; 4] = data.as_slice().try_into().map_err(|_| ClientError::UnexpectedResponse {
            sent: CommandId::ReadWrite,
            received: Some(CommandId::ReadWrite),
        })?;
        let handle = u32::from_le_bytes(handle);
        self.cache.insert(name, handle);
        Ok(handle)
    }

    /// Release the server handle for `name` and forget it locally.
    pub fn release_handle(&self, name: &str) -> Result<()> {
        match self.cache.remove(name) {
            Some(e) => self.write_raw(index_group::SYM_RELEASE_HANDLE, 0, e.handle.to_le_bytes().to_vec()),
            None => Ok(()),
        }
    }

    /// Run `op` with the handle for `name`; on a stale-handle error evict it
    /// and retry once with a fresh lookup.
    fn with_handle<T>(&self, name: &str, mut op: impl FnMut(u32) -> Result<T>) -> Result<T> {
        let handle = self.resolve_handle(name)?;
        match op(handle) {
            Err(e) if e.is_stale_handle() => {
                debug!(event = "handle_stale", symbol = name, handle, error = %e);
                self.cache.evict(name, handle);
                let fresh = self.resolve_handle(name)?;
                op(fresh)
            }
            r => r,
        }
    }

    fn check_known_size(&self, name: &str, expected: usize) -> Result<()> {
        match self.cache.peek(name).and_then(|e| e.size) {
            Some(actual) if actual as usize != expected => Err(ClientError::SizeMismatch {
                symbol: name.to_owned(),
                expected,
                actual: actual as usize,
            }),
            _ => Ok(()),
        }
    }

    pub fn read_value(&self, name: &str, ty: PlcType) -> Result<TypedValue> {
        let size = ty.size();
        self.check_known_size(name, size)?;
        let data = self.with_handle(name, |h| self.read_raw(index_group::SYM_VALUE_BY_HANDLE, h, size as u32))?;
        if data.len() != size {
            return Err(ClientError::SizeMismatch {
                symbol: name.to_owned(),
                expected: size,
                actual: data.len(),
            });
        }
        Ok(TypedValue::from_raw(ty, data)?)
    }

    pub fn write_value(&self, name: &str, value: &TypedValue) -> Result<()> {
        self.check_known_size(name, value.raw().len())?;
        let mut used = 0;
        self.with_handle(name, |h| {
            used = h;
            self.write_raw(index_group::SYM_VALUE_BY_HANDLE, h, value.raw().to_vec())
        })?;
        self.cache.record_size(name, used, value.raw().len() as u32);
        Ok(())
    }

    /// Register a device notification on `name`. The listener runs on a
    /// dedicated thread, one sample at a time, in arrival order.
    pub fn subscribe<L: Listener>(
        &self,
        name: &str,
        attrib: NotificationAttrib,
        listener: L,
    ) -> Result<Subscription> {
        self.check_known_size(name, attrib.length as usize)?;
        let (shared, worker) = start_dispatch(self.inner.config.dispatch_queue, listener);
        let added = self.with_handle(name, |h| {
            self.inner.exchange(
                Payload::AddNotificationRequest {
                    index_group: index_group::SYM_VALUE_BY_HANDLE,
                    index_offset: h,
                    attrib,
                },
                Some(shared.clone()),
            )
        });
        if let Err(e) = added {
            shared.close();
            let _ = worker.join();
            return Err(e);
        }
        debug!(event = "subscribe", symbol = name, handle = shared.handle.load(Ordering::Relaxed));
        Ok(Subscription {
            inner: self.inner.clone(),
            shared,
            symbol: name.to_owned(),
            attrib,
            worker: Some(worker),
            active: true,
        })
    }

    pub fn cache(&self) -> &HandleCache {
        &self.cache
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn stats(&self) -> SessionStats {
        let c = &self.inner.counters;
        SessionStats {
            requests: c.requests.load(Ordering::Relaxed),
            max_in_flight: c.in_flight_max.load(Ordering::Relaxed),
            notification_frames: c.notification_frames.load(Ordering::Relaxed),
            notification_samples: c.notification_samples.load(Ordering::Relaxed),
            orphan_samples: c.orphan_samples.load(Ordering::Relaxed),
        }
    }

    pub fn attribution(&self) -> Attribution {
        let c = &self.inner.counters;
        Attribution {
            requests: c.timed.load(Ordering::Relaxed),
            encode_ns: c.encode_ns.load(Ordering::Relaxed),
            decode_ns: c.decode_ns.load(Ordering::Relaxed),
            wire_wait_ns: c.wire_ns.load(Ordering::Relaxed),
        }
    }

    /// Zero the attribution counters and the in-flight high-water mark.
    pub fn reset_attribution(&self) {
        let c = &self.inner.counters;
        for a in [&c.timed, &c.encode_ns, &c.decode_ns, &c.wire_ns] {
            a.store(0, Ordering::Relaxed);
        }
        c.in_flight_max.store(0, Ordering::Relaxed);
    }

    /// Close the connection. Pending and later requests fail with
    /// [`ClientError::Disconnected`].
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let _ = self.inner.socket.shutdown(Shutdown::Both);
        if let Some(r) = self.receiver.take() {
            let _ = r.join();
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}

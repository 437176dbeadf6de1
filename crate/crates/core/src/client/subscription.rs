use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle, ThreadId};

use parking_lot::Mutex;
use tracing::{debug, warn};

use crate::codec::{NotificationAttrib, Payload};

use super::Inner;

/// Timestamp and value bytes of one sample.
type Delivery = (u64, Vec<u8>);

/// Receives notification samples as `(FILETIME timestamp, value bytes)`.
pub trait Listener: Send + 'static {
    fn on_sample(&mut self, timestamp: u64, data: &[u8]);
}

impl<F> Listener for F
where
    F: FnMut(u64, &[u8]) + Send + 'static,
{
    fn on_sample(&mut self, timestamp: u64, data: &[u8]) {
        self(timestamp, data)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubscriptionStats {
    /// Samples taken off the socket for this subscription.
    pub received: u64,
    /// Listener invocations that returned normally.
    pub delivered: u64,
    /// Samples discarded because the dispatch queue was full.
    pub overflow: u64,
    /// Samples whose timestamp was older than the previous one.
    pub out_of_order: u64,
    pub listener_panics: u64,
}

#[derive(Default)]
struct Counters {
    received: AtomicU64,
    delivered: AtomicU64,
    overflow: AtomicU64,
    out_of_order: AtomicU64,
    panics: AtomicU64,
}

/// State shared by the receive loop, the dispatch worker and the handle.
pub(crate) struct SubShared {
    pub(crate) handle: AtomicU32,
    tx: Mutex<Option<SyncSender<Delivery>>>,
    closed: AtomicBool,
    /// Held by the worker across each listener call.
    gate: Mutex<()>,
    worker: Mutex<Option<ThreadId>>,
    counters: Counters,
}

impl SubShared {
    pub(crate) fn enqueue(&self, timestamp: u64, data: Vec<u8>) {
        if self.closed.load(Ordering::Acquire) {
            return;
        }
        self.counters.received.fetch_add(1, Ordering::Relaxed);
        let tx = self.tx.lock();
        let Some(tx) = tx.as_ref() else { return };
        match tx.try_send((timestamp, data)) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                let n = self.counters.overflow.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_power_of_two() {
                    warn!(
                        event = "dispatch_overflow",
                        handle = self.handle.load(Ordering::Relaxed),
                        overflow = n
                    );
                }
            }
            Err(TrySendError::Disconnected(_)) => {}
        }
    }

    /// Stop deliveries. On return the listener is not running and will not
    /// run again, unless called from the listener itself.
    pub(crate) fn close(&self) {
        let on_worker = *self.worker.lock() == Some(thread::current().id());
        let _gate = if on_worker { None } else { Some(self.gate.lock()) };
        self.closed.store(true, Ordering::Release);
        self.tx.lock().take();
    }

    fn stats(&self) -> SubscriptionStats {
        let c = &self.counters;
        SubscriptionStats {
            received: c.received.load(Ordering::Relaxed),
            delivered: c.delivered.load(Ordering::Relaxed),
            overflow: c.overflow.load(Ordering::Relaxed),
            out_of_order: c.out_of_order.load(Ordering::Relaxed),
            listener_panics: c.panics.load(Ordering::Relaxed),
        }
    }
}

pub(crate) fn start_dispatch<L: Listener>(
    capacity: usize,
    listener: L,
) -> (Arc<SubShared>, JoinHandle<()>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let shared = Arc::new(SubShared {
        handle: AtomicU32::new(0),
        tx: Mutex::new(Some(tx)),
        closed: AtomicBool::new(false),
        gate: Mutex::new(()),
        worker: Mutex::new(None),
        counters: Counters::default(),
    });
    let sh = shared.clone();
    let worker = thread::Builder::new()
        .name("ads-dispatch".into())
        .spawn(move || dispatch_loop(sh, rx, listener))
        .expect("spawn dispatch worker");
    *shared.worker.lock() = Some(worker.thread().id());
    (shared, worker)
}

fn dispatch_loop<L: Listener>(shared: Arc<SubShared>, rx: Receiver<(u64, Vec<u8>)>, mut listener: L) {
    let mut last = 0u64;
    for (timestamp, data) in rx {
        let _gate = shared.gate.lock();
        if shared.closed.load(Ordering::Acquire) {
            break;
        }
        if timestamp < last {
            shared.counters.out_of_order.fetch_add(1, Ordering::Relaxed);
        }
        last = last.max(timestamp);
        match catch_unwind(AssertUnwindSafe(|| listener.on_sample(timestamp, &data))) {
            Ok(()) => {
                shared.counters.delivered.fetch_add(1, Ordering::Relaxed);
            }
            Err(_) => {
                let n = shared.counters.panics.fetch_add(1, Ordering::Relaxed) + 1;
                warn!(
                    event = "listener_panic",
                    handle = shared.handle.load(Ordering::Relaxed),
                    panics = n
                );
            }
        }
    }
}

/// An active device notification. Dropping it unsubscribes.
pub struct Subscription {
    pub(crate) inner: Arc<Inner>,
    pub(crate) shared: Arc<SubShared>,
    pub(crate) symbol: String,
    pub(crate) attrib: NotificationAttrib,
    pub(crate) worker: Option<JoinHandle<()>>,
    pub(crate) active: bool,
}

impl Subscription {
    pub fn handle(&self) -> u32 {
        self.shared.handle.load(Ordering::Relaxed)
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn attrib(&self) -> NotificationAttrib {
        self.attrib
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn stats(&self) -> SubscriptionStats {
        self.shared.stats()
    }

    /// Remove the registration. Always succeeds locally: the listener gets
    /// no further samples once this returns. A failed delete request is
    /// logged. Calling it again does nothing.
    pub fn unsubscribe(&mut self) {
        if !std::mem::replace(&mut self.active, false) {
            return;
        }
        let handle = self.handle();
        self.shared.close();
        self.inner.subs.lock().remove(&handle);
        match self.inner.request(Payload::DeleteNotificationRequest { handle }) {
            Ok(_) => debug!(event = "unsubscribe", handle, symbol = %self.symbol),
            Err(e) => warn!(event = "unsubscribe_failed", handle, symbol = %self.symbol, error = %e),
        }
        if let Some(worker) = self.worker.take() {
            if worker.thread().id() != thread::current().id() {
                let _ = worker.join();
            }
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.unsubscribe();
    }
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("handle", &self.handle())
            .field("symbol", &self.symbol)
            .field("active", &self.active)
            .finish()
    }
}

//! Notification completeness benchmark on a counter that increments once
//! per PLC cycle.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use adslab::client::Session;
use adslab::codec::NotificationAttrib;
use adslab::sim::{ClockMode, PlcServer, DIAGNOSTICS_INDEX_GROUP};

use crate::report::NotifyReport;
use crate::BenchError;

pub const DEFAULT_CHANGES: u64 = 250_000;
pub const DEFAULT_CYCLE: Duration = Duration::from_micros(100);
pub const COUNTER_SYMBOL: &str = "MAIN.counter";

#[derive(Clone, Debug)]
pub struct NotifyBenchSpec {
    pub symbol: String,
    pub cycle_time: Duration,
    pub changes: u64,
    pub clock: ClockMode,
    /// Give up waiting this long after the last change should have arrived.
    pub grace: Duration,
}

impl NotifyBenchSpec {
    pub fn new(changes: u64, cycle_time: Duration, clock: ClockMode) -> Self {
        NotifyBenchSpec {
            symbol: COUNTER_SYMBOL.into(),
            cycle_time,
            changes,
            clock,
            grace: Duration::from_secs(10),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.changes == 0 {
            return Err(BenchError::Spec("changes must be at least 1"));
        }
        if self.changes > i32::MAX as u64 {
            return Err(BenchError::Spec("changes exceed the DINT counter range"));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Recorder {
    values: Vec<i32>,
    /// Highest offset from the initial value seen so far.
    reached: u64,
}

/// Sequence accounting over the values a listener saw, the first of which
/// is the initial sample. Expected changes are `initial+1 ..= initial+expected`
/// with DINT wrap-around.
pub fn account(values: &[i32], expected: u64) -> NotifyReport {
    let mut r = NotifyReport {
        expected,
        sequential: true,
        ..NotifyReport::default()
    };
    let Some((&initial, rest)) = values.split_first() else {
        r.missed = expected;
        r.sequential = false;
        return r;
    };
    r.initial_count = 1;
    let mut seen = vec![false; expected as usize + 1];
    let mut max_offset = 0u64;
    let mut prev = initial;
    for &v in rest {
        let offset = v.wrapping_sub(initial) as u32 as u64;
        if v != prev.wrapping_add(1) {
            r.sequential = false;
        }
        prev = v;
        if offset == 0 || offset > expected {
            r.outside_window += 1;
            continue;
        }
        if seen[offset as usize] {
            r.duplicated += 1;
        } else {
            seen[offset as usize] = true;
            r.delivered += 1;
        }
        if offset < max_offset {
            r.out_of_order += 1;
        }
        max_offset = max_offset.max(offset);
    }
    r.missed = expected - r.delivered;
    r
}

/// Subscribe to the counter, let `changes` cycles pass and account for
/// every delivery.
///
/// With `server` given and the virtual clock, this thread steps the
/// server's cycles itself; the server must have been spawned without
/// autostart. Otherwise the counter is expected to be running already and
/// the run waits for the changes in wall time.
pub fn bench_notify(
    session: &Session,
    server: Option<&PlcServer>,
    spec: &NotifyBenchSpec,
) -> Result<NotifyReport, BenchError> {
    spec.validate()?;
    let state = Arc::new((Mutex::new(Recorder::default()), Condvar::new()));
    let st = state.clone();
    let listener = move |_ts: u64, data: &[u8]| {
        let Ok(bytes) = <[u8; 4]>::try_from(data) else { return };
        let v = i32::from_le_bytes(bytes);
        let (lock, cv) = &*st;
        let mut rec = lock.lock().expect("recorder lock");
        let first = rec.values.first().copied();
        rec.values.push(v);
        if let Some(init) = first {
            let offset = v.wrapping_sub(init) as u32 as u64;
            if offset > rec.reached && offset <= i32::MAX as u64 {
                rec.reached = offset;
                cv.notify_all();
            }
        } else {
            cv.notify_all();
        }
    };

    let started = Instant::now();
    let attrib = NotificationAttrib::on_change(4, 0, 0);
    let mut sub = session.subscribe(&spec.symbol, attrib, listener)?;

    let (lock, cv) = &*state;
    let wait_for = |target: u64, timeout: Duration| {
        let deadline = Instant::now() + timeout;
        let mut rec = lock.lock().expect("recorder lock");
        loop {
            let done = if target == 0 { !rec.values.is_empty() } else { rec.reached >= target };
            let now = Instant::now();
            if done || now >= deadline {
                return done;
            }
            rec = cv.wait_timeout(rec, deadline - now).expect("recorder lock").0;
        }
    };

    let stepped = matches!((server, spec.clock), (Some(_), ClockMode::Virtual));
    if let Some(srv) = server.filter(|_| stepped) {
        // The initial sample goes out with the first cycle.
        srv.run_cycles(spec.changes)?;
        if !wait_for(0, spec.grace) {
            return Err(BenchError::NoInitialSample);
        }
        wait_for(spec.changes, spec.grace);
    } else {
        if !wait_for(0, spec.grace) {
            return Err(BenchError::NoInitialSample);
        }
        let nominal = spec.cycle_time.saturating_mul(spec.changes.min(u32::MAX as u64) as u32);
        wait_for(spec.changes, nominal + spec.grace);
    }
    let elapsed = started.elapsed();
    sub.unsubscribe();
    let overflow = sub.stats().overflow;

    let values = std::mem::take(&mut lock.lock().expect("recorder lock").values);
    let mut report = account(&values, spec.changes);
    report.symbol = spec.symbol.clone();
    report.clock = match spec.clock {
        ClockMode::Real => "real".into(),
        ClockMode::Virtual => "virtual".into(),
    };
    report.cycle_us = spec.cycle_time.as_secs_f64() * 1e6;
    report.elapsed_s = elapsed.as_secs_f64();
    report.client_overflow = overflow;
    match server {
        Some(srv) => {
            let stats = srv.stats();
            report.server_drops = stats.counters.dropped_samples;
            if spec.clock == ClockMode::Real {
                report.server_overruns = Some(stats.counters.overruns);
                report.max_lateness_us = Some(stats.max_lateness.as_secs_f64() * 1e6);
            }
        }
        None => {
            let diag = session.read_raw(DIAGNOSTICS_INDEX_GROUP, 0, 32)?;
            if let Some(b) = diag.get(8..16) {
                report.server_drops = u64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_sequence() {
        let v: Vec<i32> = (10..=20).collect();
        let r = account(&v, 10);
        assert_eq!((r.delivered, r.missed, r.duplicated, r.out_of_order, r.initial_count), (10, 0, 0, 0, 1));
        assert!(r.sequential);
    }

    #[test]
    fn gaps_duplicates_and_reordering() {
        let r = account(&[0, 1, 3, 3, 2, 5], 5);
        assert_eq!(r.delivered, 4);
        assert_eq!(r.missed, 1);
        assert_eq!(r.duplicated, 1);
        assert_eq!(r.out_of_order, 1);
        assert_eq!(r.delivered + r.missed, r.expected);
        assert!(!r.sequential);
    }

    #[test]
    fn wraps_at_dint_max() {
        let v = [i32::MAX - 1, i32::MAX, i32::MIN, i32::MIN + 1];
        let r = account(&v, 3);
        assert_eq!((r.delivered, r.missed), (3, 0));
        assert!(r.sequential);
    }

    #[test]
    fn values_beyond_window_are_separate() {
        let r = account(&[0, 1, 2, 3], 2);
        assert_eq!((r.delivered, r.outside_window), (2, 1));
    }

    #[test]
    fn nothing_received() {
        let r = account(&[], 7);
        assert_eq!((r.delivered, r.missed, r.initial_count), (0, 7, 0));
    }
}

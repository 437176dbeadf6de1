use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use adslab::client::{ClientConfig, ClientError, Session};
use adslab::codec::{encode_frame, AdsCode, AmsHeader, FrameBuffer, NotificationAttrib, Payload};
use adslab::sim::{ads_state, load_symbol_config, ClockMode, PlcServer, ServerConfig, COUNTER_CONFIG, PAPER28_CONFIG};
use adslab::{PlcType, Scalar, ScalarType, TypedValue};

fn server(config: &str, clock: ClockMode) -> PlcServer {
    let mut cfg = ServerConfig::loopback(load_symbol_config(config).unwrap());
    cfg.clock = clock;
    cfg.autostart = clock == ClockMode::Real;
    PlcServer::spawn(cfg).unwrap()
}

fn connect(server: &PlcServer) -> Session {
    Session::connect(ClientConfig::new(server.local_addr(), server.ams_address())).unwrap()
}

fn wait_until(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        thread::sleep(Duration::from_millis(2));
    }
    cond()
}

fn scalar(ty: ScalarType) -> PlcType {
    PlcType::Scalar(ty)
}

#[test]
fn device_info_and_state() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    assert_eq!(s.read_state().unwrap().0, ads_state::RUN);
    assert!(!s.read_device_info().unwrap().name_str().is_empty());
}

#[test]
fn connect_to_closed_port_fails() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let srv_addr = "1.2.3.4.1.1:851".parse().unwrap();
    let t = Instant::now();
    let err = Session::connect(ClientConfig::new(port, srv_addr)).err().unwrap();
    assert!(matches!(err, ClientError::Connect { .. }), "{err}");
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn typed_values_round_trip() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);

    let v = TypedValue::scalar(Scalar::LReal(2.25));
    s.write_value("MAIN.lrVar", &v).unwrap();
    assert_eq!(s.read_value("MAIN.lrVar", scalar(ScalarType::LReal)).unwrap(), v);

    let arr_ty = PlcType::array(ScalarType::LReal, 3);
    let arr = TypedValue::array(
        ScalarType::LReal,
        &[Scalar::LReal(1.0), Scalar::LReal(2.0), Scalar::LReal(3.0)],
    )
    .unwrap();
    s.write_value("MAIN.lrArr", &arr).unwrap();
    let back = s.read_value("MAIN.lrArr", arr_ty).unwrap();
    assert_eq!(back.elements(), vec![Scalar::LReal(1.0), Scalar::LReal(2.0), Scalar::LReal(3.0)]);

    s.write_value("MAIN.siVar", &TypedValue::scalar(Scalar::SInt(-5))).unwrap();
    // Raw memory holds the two's-complement byte.
    assert_eq!(srv.with_plc(|p| p.value("MAIN.siVar").unwrap().to_vec()), vec![0xFB]);
    assert_eq!(
        s.read_value("MAIN.siVar", scalar(ScalarType::SInt)).unwrap().as_scalar(),
        Some(Scalar::SInt(-5))
    );

    s.write_value("MAIN.liVar", &TypedValue::scalar(Scalar::LInt(1 << 40))).unwrap();
    assert_eq!(
        s.read_value("MAIN.liVar", scalar(ScalarType::LInt)).unwrap().as_scalar(),
        Some(Scalar::LInt(1 << 40))
    );
    s.write_value("MAIN.byVar", &TypedValue::scalar(Scalar::Byte(255))).unwrap();
    assert_eq!(
        s.read_value("MAIN.byVar", scalar(ScalarType::Byte)).unwrap().as_scalar(),
        Some(Scalar::Byte(255))
    );
}

#[test]
fn wrong_size_write_is_rejected() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    // Size unknown: the server refuses it.
    let err = s.write_value("MAIN.lrVar", &TypedValue::scalar(Scalar::DInt(1))).unwrap_err();
    assert_eq!(err.ads_code(), Some(AdsCode::INVALID_SIZE));

    // Size learned from a good write: refused locally, no traffic.
    s.write_value("MAIN.lrVar", &TypedValue::scalar(Scalar::LReal(1.0))).unwrap();
    let before = s.stats().requests;
    let err = s.write_value("MAIN.lrVar", &TypedValue::scalar(Scalar::DInt(1))).unwrap_err();
    assert!(matches!(err, ClientError::SizeMismatch { expected: 4, actual: 8, .. }), "{err}");
    let err = s.read_value("MAIN.lrVar", scalar(ScalarType::Int)).unwrap_err();
    assert!(matches!(err, ClientError::SizeMismatch { .. }), "{err}");
    assert_eq!(s.stats().requests, before);
}

#[test]
fn unknown_symbol_is_not_cached() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    for i in 1..=2 {
        let err = s.resolve_handle("MAIN.missing").unwrap_err();
        assert_eq!(err.ads_code(), Some(AdsCode::SYMBOL_NOT_FOUND));
        assert_eq!(s.stats().requests, i);
    }
    assert_eq!(s.cache_stats().entries, 0);
}

#[test]
fn repeated_reads_hit_the_cache() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    for _ in 0..100 {
        s.read_value("MAIN.diVar", scalar(ScalarType::DInt)).unwrap();
    }
    let c = s.cache_stats();
    assert_eq!((c.misses, c.hits), (1, 99));
    assert_eq!(s.stats().requests, 101);
    assert_eq!(srv.stats().counters.handle_lookups, 1);
}

#[test]
fn stale_handle_is_resolved_again() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    s.write_value("MAIN.iVar", &TypedValue::scalar(Scalar::Int(42))).unwrap();
    // A PLC reset drops every handle.
    s.write_control(ads_state::RESET, 0).unwrap();
    let v = s.read_value("MAIN.iVar", scalar(ScalarType::Int)).unwrap();
    assert_eq!(v.as_scalar(), Some(Scalar::Int(42)));
    assert_eq!(s.cache_stats().evictions, 1);

    srv.invalidate_symbol_handles();
    s.read_value("MAIN.iVar", scalar(ScalarType::Int)).unwrap();
    assert_eq!(s.cache_stats().evictions, 2);
    assert_eq!(srv.stats().counters.handle_lookups, 3);
}

#[test]
fn sessions_have_independent_handles() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let a = connect(&srv);
    let b = connect(&srv);
    let ha = a.resolve_handle("MAIN.udiVar").unwrap();
    let hb = b.resolve_handle("MAIN.wVar").unwrap();
    assert_eq!(ha, hb, "fresh connections number handles alike");
    a.write_value("MAIN.udiVar", &TypedValue::scalar(Scalar::UDInt(7))).unwrap();
    b.write_value("MAIN.wVar", &TypedValue::scalar(Scalar::Word(9))).unwrap();
    assert_eq!(
        b.read_value("MAIN.udiVar", scalar(ScalarType::UDInt)).unwrap().as_scalar(),
        Some(Scalar::UDInt(7))
    );
    assert_eq!(
        a.read_value("MAIN.wVar", scalar(ScalarType::Word)).unwrap().as_scalar(),
        Some(Scalar::Word(9))
    );
}

#[test]
fn concurrent_callers_share_a_session() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    let names = ["MAIN.diVar", "MAIN.udiVar", "MAIN.dwVar", "MAIN.rVar"];
    let types = [ScalarType::DInt, ScalarType::UDInt, ScalarType::DWord, ScalarType::Real];
    thread::scope(|scope| {
        for (t, (name, ty)) in names.iter().zip(types).enumerate() {
            let s = &s;
            scope.spawn(move || {
                for i in 0..300u64 {
                    let v = TypedValue::from_index(PlcType::Scalar(ty), i * 4 + t as u64);
                    s.write_value(name, &v).unwrap();
                    assert_eq!(s.read_value(name, PlcType::Scalar(ty)).unwrap(), v);
                }
            });
        }
    });
    assert_eq!(s.stats().requests, names.len() as u64 * (600 + 1));
}

#[test]
fn two_readers_see_consistent_values() {
    let srv = server(PAPER28_CONFIG, ClockMode::Virtual);
    let w = connect(&srv);
    w.write_value("MAIN.uliVar", &TypedValue::scalar(Scalar::ULInt(0x0102_0304_0506_0708))).unwrap();
    let readers: Vec<_> = (0..2).map(|_| connect(&srv)).collect();
    thread::scope(|scope| {
        for r in &readers {
            scope.spawn(move || {
                for _ in 0..200 {
                    let v = r.read_value("MAIN.uliVar", scalar(ScalarType::ULInt)).unwrap();
                    assert_eq!(v.as_scalar(), Some(Scalar::ULInt(0x0102_0304_0506_0708)));
                }
            });
        }
    });
}

/// Accepts one connection and hands each decoded request to `respond`.
fn fake_server<F>(respond: F) -> (std::net::SocketAddr, thread::JoinHandle<()>)
where
    F: FnOnce(TcpStream, Vec<(AmsHeader, Payload)>, &mut dyn FnMut() -> Option<(AmsHeader, Payload)>) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut rx = stream.try_clone().unwrap();
        let mut fb = FrameBuffer::new();
        let mut buf = [0u8; 4096];
        let mut next = move || loop {
            if let Some(f) = fb.next_frame().unwrap() {
                return Some((f.header, f.payload));
            }
            match rx.read(&mut buf) {
                Ok(0) | Err(_) => return None,
                Ok(n) => fb.extend(&buf[..n]),
            }
        };
        stream.set_nodelay(true).unwrap();
        respond(stream, Vec::new(), &mut next);
    });
    (addr, handle)
}

#[test]
fn shuffled_responses_reach_their_callers() {
    const N: usize = 16;
    let (addr, srv) = fake_server(|mut stream, _, next| {
        let mut batch = Vec::new();
        while batch.len() < N {
            batch.push(next().unwrap());
        }
        // Deterministic shuffle.
        let mut order: Vec<usize> = (0..N).collect();
        let mut x = 0x9E37_79B9u32;
        for i in (1..N).rev() {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            order.swap(i, x as usize % (i + 1));
        }
        for i in order {
            let (h, p) = &batch[i];
            let Payload::ReadRequest { index_offset, .. } = p else { panic!("{p:?}") };
            let reply = Payload::ReadResponse {
                result: 0,
                data: index_offset.to_le_bytes().to_vec(),
            };
            stream.write_all(&encode_frame(&h.reply(0), &reply).unwrap()).unwrap();
        }
        while next().is_some() {}
    });
    let s = Session::connect(ClientConfig::new(addr, "1.1.1.1.1.1:851".parse().unwrap())).unwrap();
    let barrier = std::sync::Barrier::new(N);
    thread::scope(|scope| {
        for t in 0..N as u32 {
            let (s, barrier) = (&s, &barrier);
            scope.spawn(move || {
                barrier.wait();
                let data = s.read_raw(0x4020, 1000 + t, 4).unwrap();
                assert_eq!(data, (1000 + t).to_le_bytes());
            });
        }
    });
    assert_eq!(s.stats().max_in_flight, N);
    drop(s);
    srv.join().unwrap();
}

#[test]
fn disconnect_fails_pending_request() {
    let (addr, srv) = fake_server(|stream, _, next| {
        next().unwrap();
        drop(stream);
    });
    let s = Session::connect(ClientConfig::new(addr, "1.1.1.1.1.1:851".parse().unwrap())).unwrap();
    let t = Instant::now();
    let err = s.read_raw(0x4020, 0, 4).unwrap_err();
    assert!(matches!(err, ClientError::Disconnected), "{err}");
    assert!(t.elapsed() < Duration::from_secs(4));
    srv.join().unwrap();
    assert!(wait_until(Duration::from_secs(2), || !s.is_connected()));
    assert!(matches!(s.read_raw(0x4020, 0, 4), Err(ClientError::Disconnected)));
}

#[test]
fn unanswered_request_times_out() {
    let (addr, srv) = fake_server(|_stream, _, next| while next().is_some() {});
    let mut cfg = ClientConfig::new(addr, "1.1.1.1.1.1:851".parse().unwrap());
    cfg.request_timeout = Duration::from_millis(150);
    let s = Session::connect(cfg).unwrap();
    let err = s.read_raw(0x4020, 0, 4).unwrap_err();
    assert!(matches!(err, ClientError::Timeout { invoke_id: 1, .. }), "{err}");
    let err = s.read_raw(0x4020, 0, 4).unwrap_err();
    assert!(matches!(err, ClientError::Timeout { invoke_id: 2, .. }), "{err}");
    drop(s);
    srv.join().unwrap();
}

#[test]
fn zero_timeout_rejected() {
    let mut cfg = ClientConfig::new("127.0.0.1:1".parse().unwrap(), "1.1.1.1.1.1:851".parse().unwrap());
    cfg.request_timeout = Duration::ZERO;
    assert!(matches!(Session::connect(cfg), Err(ClientError::Config(_))));
}

type Log = Arc<Mutex<Vec<(u64, i32)>>>;

fn counter_listener(log: &Log) -> impl FnMut(u64, &[u8]) + Send + 'static {
    let log = log.clone();
    move |ts, data| log.lock().unwrap().push((ts, i32::from_le_bytes(data.try_into().unwrap())))
}

#[test]
fn counter_notifications_arrive_in_order() {
    let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    let log = Log::default();
    let sub = s
        .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 0, 0), counter_listener(&log))
        .unwrap();
    srv.run_cycles(5000).unwrap();
    assert!(wait_until(Duration::from_secs(10), || log.lock().unwrap().len() == 5001));
    let log = log.lock().unwrap();
    for (i, w) in log.windows(2).enumerate() {
        assert!(w[0].0 < w[1].0, "timestamps at {i}");
        assert_eq!(w[1].1, w[0].1 + 1, "values at {i}");
    }
    assert_eq!(log[0].1, 0);
    let st = sub.stats();
    assert_eq!((st.delivered, st.overflow, st.out_of_order), (5001, 0, 0));
    assert_eq!(srv.stats().counters.dropped_samples, 0);
}

#[test]
fn virtual_runs_are_deterministic() {
    let run = || {
        let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
        let s = connect(&srv);
        let log = Log::default();
        let _sub = s
            .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 3000, 0), counter_listener(&log))
            .unwrap();
        // Samples wait up to three cycles, so run past the compared range.
        srv.run_cycles(510).unwrap();
        assert!(wait_until(Duration::from_secs(10), || log.lock().unwrap().last().is_some_and(|l| l.1 >= 500)));
        let mut v = log.lock().unwrap().clone();
        v.retain(|l| l.1 <= 500);
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn unsubscribe_stops_deliveries_and_is_idempotent() {
    let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    let log = Log::default();
    let mut sub = s
        .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 0, 0), counter_listener(&log))
        .unwrap();
    srv.run_cycles(10).unwrap();
    assert!(wait_until(Duration::from_secs(5), || log.lock().unwrap().len() == 11));
    let before = s.stats().requests;
    sub.unsubscribe();
    sub.unsubscribe();
    assert!(!sub.is_active());
    assert_eq!(s.stats().requests, before + 1);
    srv.run_cycles(1000).unwrap();
    thread::sleep(Duration::from_millis(50));
    assert_eq!(log.lock().unwrap().len(), 11);
    assert_eq!(s.stats().orphan_samples, 0);
}

#[test]
fn unsubscribe_on_dead_connection_succeeds_locally() {
    let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    let mut sub = s
        .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 0, 0), |_: u64, _: &[u8]| {})
        .unwrap();
    srv.shutdown();
    assert!(wait_until(Duration::from_secs(2), || !s.is_connected()));
    sub.unsubscribe();
    assert!(!sub.is_active());
}

#[test]
fn subscribe_errors() {
    let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    let err = s
        .subscribe("MAIN.nothing", NotificationAttrib::on_change(4, 0, 0), |_: u64, _: &[u8]| {})
        .unwrap_err();
    assert_eq!(err.ads_code(), Some(AdsCode::SYMBOL_NOT_FOUND));
    let err = s
        .subscribe("MAIN.counter", NotificationAttrib::on_change(8, 0, 0), |_: u64, _: &[u8]| {})
        .unwrap_err();
    assert_eq!(err.ads_code(), Some(AdsCode::INVALID_SIZE));
}

#[test]
fn panicking_listener_is_contained() {
    let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
    let s = connect(&srv);
    let calls = Arc::new(AtomicUsize::new(0));
    let c2 = calls.clone();
    let sub = s
        .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 0, 0), move |_: u64, d: &[u8]| {
            c2.fetch_add(1, Ordering::SeqCst);
            if i32::from_le_bytes(d.try_into().unwrap()) % 2 == 1 {
                panic!("odd");
            }
        })
        .unwrap();
    srv.run_cycles(9).unwrap();
    assert!(wait_until(Duration::from_secs(5), || calls.load(Ordering::SeqCst) == 10));
    let st = sub.stats();
    assert_eq!((st.delivered, st.listener_panics), (5, 5));
    // Requests still work.
    s.read_state().unwrap();
}

#[test]
fn disconnect_collects_registrations() {
    let srv = server(COUNTER_CONFIG, ClockMode::Virtual);
    {
        let s = connect(&srv);
        let sub = s
            .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 0, 0), |_: u64, _: &[u8]| {})
            .unwrap();
        std::mem::forget(sub);
        assert_eq!(srv.stats().connections, 1);
    }
    assert!(wait_until(Duration::from_secs(5), || srv.stats().connections == 0));
    srv.run_cycles(10).unwrap();
    assert_eq!(srv.stats().counters.cycles, 10);
}

#[test]
fn real_clock_counter_runs() {
    let srv = server(COUNTER_CONFIG, ClockMode::Real);
    let s = connect(&srv);
    let log = Log::default();
    let _sub = s
        .subscribe("MAIN.counter", NotificationAttrib::on_change(4, 0, 0), counter_listener(&log))
        .unwrap();
    assert!(wait_until(Duration::from_secs(5), || log.lock().unwrap().len() > 100));
    let log = log.lock().unwrap();
    assert!(log.windows(2).all(|w| w[1].1 > w[0].1 && w[1].0 >= w[0].0));
    assert!(srv.run_cycles(1).is_err());
}

//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any fails.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use adslab::client::{ClientConfig, Session};
use adslab::codec::{
    decode_frame, encode_frame, index_group, AmsAddress, AmsHeader, AmsNetId, CommandId, Decoded,
    DeviceInfo, FrameBuffer, NotificationAttrib, NotificationStamp, NotificationStream, Payload,
    Sample, StateFlags, TransMode,
};
use adslab::sim::{
    load_symbol_config, ClockMode, ConnId, OutgoingStream, Plc, PlcConfig, PlcServer, ServerConfig,
    PAPER28_CONFIG,
};
use adslab::time::{to_ticks, VIRTUAL_EPOCH_TICKS};
use adslab::{PlcType, ScalarType, TypedValue};
use adslab_bench::report::{render_table, BenchReport};
use adslab_bench::{bench_notify, bench_sync, counter_program, Direction, Embedded, NotifyBenchSpec, SyncBenchSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn paper28() -> PlcConfig {
    load_symbol_config(PAPER28_CONFIG).expect("bundled config")
}

// ---- 1: virtual-clock notification completeness ------------------------

fn notify_virtual() -> Outcome {
    let cycle = Duration::from_micros(100);
    let emb = Embedded::start(counter_program(cycle).map_err(|e| e.to_string())?, ClockMode::Virtual)
        .map_err(|e| e.to_string())?;
    let spec = NotifyBenchSpec::new(250_000, cycle, ClockMode::Virtual);
    let r = bench_notify(&emb.session, Some(&emb.server), &spec).map_err(|e| e.to_string())?;
    let detail = format!(
        "delivered={} missed={} duplicated={} out_of_order={} sequential={} elapsed={:.2}s",
        r.delivered, r.missed, r.duplicated, r.out_of_order, r.sequential, r.elapsed_s
    );
    check(
        r.expected == 250_000
            && r.delivered == 250_000
            && r.missed == 0
            && r.duplicated == 0
            && r.out_of_order == 0
            && r.outside_window == 0
            && r.sequential,
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---- 2: real-clock 10 kHz ------------------------------------------------

fn notify_real() -> Outcome {
    let cycle = Duration::from_micros(100);
    let emb = Embedded::start(counter_program(cycle).map_err(|e| e.to_string())?, ClockMode::Real)
        .map_err(|e| e.to_string())?;
    let spec = NotifyBenchSpec::new(100_000, cycle, ClockMode::Real);
    let r = bench_notify(&emb.session, Some(&emb.server), &spec).map_err(|e| e.to_string())?;
    let detail = format!(
        "delivered={} missed={} ({:.4}%) server_drops={} client_overflow={} overruns={} max_lateness={:.0}us cores={}",
        r.delivered,
        r.missed,
        r.missed_fraction() * 100.0,
        r.server_drops,
        r.client_overflow,
        r.server_overruns.unwrap_or(0),
        r.max_lateness_us.unwrap_or(0.0),
        thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    );
    check(
        r.delivered + r.missed == r.expected && r.missed as f64 <= r.expected as f64 * 0.001,
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---- 3 and 4: sampling rules on the PLC model directly -------------------

const CLIENT: AmsAddress = AmsAddress::new(AmsNetId::new(10, 0, 0, 1, 1, 1), 40000);

struct Rig {
    plc: Plc,
    conn: ConnId,
    cycle: u64,
    now: u64,
}

impl Rig {
    fn new(symbols: &str, cycle: Duration) -> Rig {
        let mut cfg = load_symbol_config(&format!("[symbols]\n{symbols}")).expect("test config");
        cfg.task.cycle_time = cycle;
        let mut plc = Plc::new(cfg, 851, VIRTUAL_EPOCH_TICKS);
        let conn = plc.open_connection();
        Rig {
            plc,
            conn,
            cycle: to_ticks(cycle),
            now: VIRTUAL_EPOCH_TICKS,
        }
    }

    fn offset(&self, name: &str) -> u32 {
        self.plc.symbol(name).expect("declared").index_offset
    }

    fn subscribe(&mut self, name: &str, attrib: NotificationAttrib) -> u32 {
        let off = self.offset(name);
        self.plc
            .add_notification(self.conn, CLIENT, index_group::PLC_DATA, off, attrib)
            .expect("subscribe")
    }

    fn write(&mut self, name: &str, data: &[u8]) {
        let off = self.offset(name);
        self.plc.write(self.conn, index_group::PLC_DATA, off, data).expect("write");
    }

    fn cycle(&mut self) -> Vec<OutgoingStream> {
        self.now += self.cycle;
        self.plc.run_cycle(self.now)
    }
}

fn samples_of(out: &[OutgoingStream], handle: u32) -> Vec<(u64, Vec<u8>)> {
    out.iter()
        .flat_map(|o| o.stream.samples())
        .filter(|(_, s)| s.handle == handle)
        .map(|(ts, s)| (ts, s.data.clone()))
        .collect()
}

fn once_per_cycle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a3f);
    let mut schedules = 0;
    let mut multi_write_points = 0;
    for _ in 0..500 {
        let mut rig = Rig::new("MAIN.x : INT\n", Duration::from_micros(100));
        let every = rng.gen_range(0..4u64);
        let mode = if rng.gen_bool(0.5) { TransMode::ON_CHANGE } else { TransMode::CYCLIC };
        let attrib = NotificationAttrib {
            length: 2,
            trans_mode: mode,
            max_delay: 0,
            cycle_time: (every * rig.cycle) as u32,
        };
        let h = rig.subscribe("MAIN.x", attrib);
        let mut last_sent = 0i16.to_le_bytes().to_vec();
        let mut last_check = rig.now;
        let mut written = last_sent.clone();
        let mut writes_since = 0;
        // The initial sample leaves with the first cycle.
        let mut pending_initial = true;
        for _ in 0..200 {
            for _ in 0..rng.gen_range(0..=3) {
                // Narrow range so repeated values happen.
                let v: i16 = rng.gen_range(-3..=3);
                rig.write("MAIN.x", &v.to_le_bytes());
                written = v.to_le_bytes().to_vec();
                writes_since += 1;
            }
            let out = rig.cycle();
            let got = samples_of(&out, h);
            let mut expect: Vec<Vec<u8>> = Vec::new();
            if pending_initial {
                expect.push(last_sent.clone());
                pending_initial = false;
            }
            let sampling = every == 0 || rig.now - last_check >= every * rig.cycle;
            if sampling {
                last_check = rig.now;
                let current = written.clone();
                if mode == TransMode::CYCLIC || current != last_sent {
                    expect.push(current.clone());
                    last_sent = current;
                }
                if writes_since >= 2 {
                    multi_write_points += 1;
                }
                writes_since = 0;
            }
            let got_data: Vec<Vec<u8>> = got.iter().map(|(_, d)| d.clone()).collect();
            check(got_data == expect, || {
                format!("schedule {schedules}: at {} expected {expect:?}, got {got_data:?}", rig.now)
            })?;
        }
        schedules += 1;
    }
    check(multi_write_points > 1000, || format!("only {multi_write_points} multi-write sampling points"))?;
    Ok(format!(
        "{schedules} random schedules, {multi_write_points} sampling points after >=2 writes, each one sample with the final value"
    ))
}

fn max_delay_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd31a);
    let mut flushed = 0u64;
    let mut worst_slack = i128::MAX;
    for schedule in 0..300 {
        let cycle_us = rng.gen_range(50..=2000u64);
        let mut rig = Rig::new("MAIN.a : DINT\nMAIN.b : LREAL\nMAIN.c : BYTE\n", Duration::from_micros(cycle_us));
        let names = ["MAIN.a", "MAIN.b", "MAIN.c"];
        let sizes = [4u32, 8, 1];
        let mut regs = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            let k = rng.gen_range(0..3);
            let attrib = NotificationAttrib {
                length: sizes[k],
                trans_mode: if rng.gen_bool(0.5) { TransMode::ON_CHANGE } else { TransMode::CYCLIC },
                // Arbitrary tick counts, not cycle multiples.
                max_delay: rng.gen_range(0..=(12 * rig.cycle)) as u32 * rng.gen_range(0..=1),
                cycle_time: rng.gen_range(0..=(3 * rig.cycle)) as u32,
            };
            let h = rig.subscribe(names[k], attrib);
            regs.push((h, attrib));
        }
        let cycles = 300;
        let mut seen = 0u64;
        for n in 0..cycles + 20 {
            if n < cycles && rng.gen_bool(0.6) {
                let k = rng.gen_range(0..3);
                let data: Vec<u8> = (0..sizes[k]).map(|_| rng.gen_range(0..4u8)).collect();
                rig.write(names[k], &data);
            }
            let out = rig.cycle();
            for &(h, attrib) in &regs {
                for (ts, _) in samples_of(&out, h) {
                    let latency = rig.now - ts;
                    let bound = attrib.max_delay as u64 + rig.cycle;
                    worst_slack = worst_slack.min(bound as i128 - latency as i128);
                    check(latency <= bound, || {
                        format!(
                            "schedule {schedule}: handle {h} sample at {ts} flushed at {} (latency {latency} > {bound} ticks)",
                            rig.now
                        )
                    })?;
                    seen += 1;
                }
            }
        }
        // Nothing is left behind once the schedule has drained.
        let mut tail = 0;
        for _ in 0..(12 * 3 + 4) {
            let out = rig.cycle();
            for &(h, attrib) in &regs {
                if attrib.trans_mode == TransMode::ON_CHANGE {
                    tail += samples_of(&out, h).len() as u64;
                }
            }
        }
        check(tail == 0, || format!("schedule {schedule}: {tail} on-change samples after the value settled"))?;
        flushed += seen;
    }
    Ok(format!("300 random schedules, {flushed} samples flushed within max_delay + one cycle, min slack {worst_slack} ticks"))
}

// ---- 5, 6, 10: serial read/write benchmark -------------------------------

fn run_sync(ops: u64, rounds: u64) -> Result<BenchReport, String> {
    let plc = paper28();
    let vars = plc.symbols.clone();
    let emb = Embedded::start(plc, ClockMode::Virtual).map_err(|e| e.to_string())?;
    let mut spec = SyncBenchSpec::new(vars);
    spec.ops_per_variable = ops;
    spec.rounds = rounds;
    bench_sync(&emb.session, &spec).map_err(|e| e.to_string())
}

fn sync_mirror(report: &BenchReport) -> Outcome {
    check(report.valid && report.error.is_none(), || format!("run invalid: {:?}", report.error))?;
    check(report.rows.len() == 56, || format!("{} rows, want 28 x 2", report.rows.len()))?;
    check(report.rows.iter().all(|r| r.count == 1000), || "a row has the wrong op count".into())?;
    check(report.max_in_flight == 1, || format!("max in flight {}", report.max_in_flight))?;
    let table = render_table(report);
    for label in ["LReal", "LInt", "SInt", "Byte", "LReal[3]"] {
        check(table.lines().any(|l| l.split_whitespace().next() == Some(label)), || {
            format!("table has no {label} row")
        })?;
    }
    let mean = report.overall_mean_us();
    check(mean < 1000.0, || format!("overall mean {mean:.1} us"))?;
    Ok(format!("56 rows, 1000 ops each, error-free, overall mean {mean:.1} us per op"))
}

fn attribution(report: &BenchReport) -> Outcome {
    let a = report.attribution.as_ref().ok_or("no attribution section")?;
    let rows_total: f64 = report.rows.iter().map(|r| r.total_s).sum();
    let share = a.codec_share();
    let gap = a.conservation_error();
    let detail = format!(
        "codec {:.2}% of {:.3}s, wire wait {:.1}%, other {:.1}%, parts off by {:.4}%",
        share * 100.0,
        a.total_s,
        a.wire_wait_s / a.total_s * 100.0,
        a.other_s / a.total_s * 100.0,
        gap * 100.0
    );
    check((rows_total - a.total_s).abs() <= 1e-6 * rows_total.max(1.0), || {
        format!("attributed total {:.6}s differs from row totals {:.6}s", a.total_s, rows_total)
    })?;
    check(a.encode_decode_s + a.wire_wait_s <= a.total_s, || format!("measured parts exceed total: {detail}"))?;
    check(share < 0.05 && gap <= 0.01, || detail.clone())?;
    Ok(detail)
}

fn parity(report: &BenchReport) -> Outcome {
    check(report.valid, || format!("run invalid: {:?}", report.error))?;
    let mut worst = (0.0f64, String::new());
    for ty in ScalarType::ALL {
        for dir in [Direction::Read, Direction::Write] {
            let find = |label: String| {
                report
                    .rows
                    .iter()
                    .find(|r| r.ty == label && r.direction == dir)
                    .map(|r| r.mean_us)
            };
            let scalar = find(PlcType::Scalar(ty).label()).ok_or("missing scalar row")?;
            let array = find(PlcType::array(ty, 3).label()).ok_or("missing array row")?;
            let rel = (array - scalar).abs() / scalar;
            if rel > worst.0 {
                worst = (rel, format!("{} {}: {array:.1} vs {scalar:.1} us", ty.label(), dir.as_str()));
            }
        }
    }
    let detail = format!("worst gap {:.1}% ({})", worst.0 * 100.0, worst.1);
    check(worst.0 <= 0.25, || detail.clone())?;
    Ok(detail)
}

// ---- 7: handle cache on the wire -----------------------------------------

/// Forwards one connection and counts handle-by-name lookups sent to the
/// server.
fn tap(upstream: SocketAddr, lookups: Arc<AtomicU64>, frames: Arc<AtomicU64>) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind tap");
    let addr = listener.local_addr().expect("tap addr");
    thread::spawn(move || {
        let (client, _) = listener.accept().expect("tap accept");
        let server = TcpStream::connect(upstream).expect("tap upstream");
        client.set_nodelay(true).ok();
        server.set_nodelay(true).ok();
        let (mut c_rx, mut s_tx) = (client.try_clone().unwrap(), server.try_clone().unwrap());
        let (mut s_rx, mut c_tx) = (server, client);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = s_rx.read(&mut buf) {
                if n == 0 || c_tx.write_all(&buf[..n]).is_err() {
                    break;
                }
            }
        });
        let mut fb = FrameBuffer::new();
        let mut buf = [0u8; 4096];
        while let Ok(n) = c_rx.read(&mut buf) {
            if n == 0 {
                break;
            }
            fb.extend(&buf[..n]);
            while let Ok(Some(f)) = fb.next_frame() {
                frames.fetch_add(1, Ordering::SeqCst);
                if let Payload::ReadWriteRequest { index_group: index_group::SYM_HANDLE_BY_NAME, .. } = f.payload {
                    lookups.fetch_add(1, Ordering::SeqCst);
                }
            }
            if s_tx.write_all(&buf[..n]).is_err() {
                break;
            }
        }
    });
    addr
}

fn handle_cache() -> Outcome {
    let server = PlcServer::spawn(ServerConfig::loopback(paper28())).map_err(|e| e.to_string())?;
    let lookups = Arc::new(AtomicU64::new(0));
    let frames = Arc::new(AtomicU64::new(0));
    let proxy = tap(server.local_addr(), lookups.clone(), frames.clone());
    let session = Session::connect(ClientConfig::new(proxy, server.ams_address())).map_err(|e| e.to_string())?;
    let ty = PlcType::Scalar(ScalarType::LReal);
    for i in 0..10_000 {
        session.read_value("MAIN.lrVar", ty).map_err(|e| format!("read {i}: {e}"))?;
    }
    let (l, f) = (lookups.load(Ordering::SeqCst), frames.load(Ordering::SeqCst));
    let detail = format!("{f} request frames captured, {l} handle lookups");
    check(l == 1 && f == 10_001, || detail.clone())?;
    Ok(detail)
}

// ---- 8: codec soundness ----------------------------------------------------

fn rand_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn rand_payload(rng: &mut ChaCha8Rng, cmd: CommandId, response: bool) -> Payload {
    use Payload::*;
    match (cmd, response) {
        (CommandId::ReadDeviceInfo, false) => ReadDeviceInfoRequest,
        (CommandId::ReadDeviceInfo, true) => ReadDeviceInfoResponse {
            result: rng.gen(),
            info: DeviceInfo {
                major: rng.gen(),
                minor: rng.gen(),
                build: rng.gen(),
                name: rng.gen(),
            },
        },
        (CommandId::Read, false) => ReadRequest {
            index_group: rng.gen(),
            index_offset: rng.gen(),
            length: rng.gen(),
        },
        (CommandId::Read, true) => ReadResponse { result: rng.gen(), data: rand_bytes(rng, 300) },
        (CommandId::Write, false) => WriteRequest {
            index_group: rng.gen(),
            index_offset: rng.gen(),
            data: rand_bytes(rng, 300),
        },
        (CommandId::Write, true) => WriteResponse { result: rng.gen() },
        (CommandId::ReadState, false) => ReadStateRequest,
        (CommandId::ReadState, true) => ReadStateResponse {
            result: rng.gen(),
            ads_state: rng.gen(),
            device_state: rng.gen(),
        },
        (CommandId::WriteControl, false) => WriteControlRequest {
            ads_state: rng.gen(),
            device_state: rng.gen(),
            data: rand_bytes(rng, 64),
        },
        (CommandId::WriteControl, true) => WriteControlResponse { result: rng.gen() },
        (CommandId::AddDeviceNotification, false) => AddNotificationRequest {
            index_group: rng.gen(),
            index_offset: rng.gen(),
            attrib: NotificationAttrib {
                length: rng.gen(),
                trans_mode: TransMode(rng.gen()),
                max_delay: rng.gen(),
                cycle_time: rng.gen(),
            },
        },
        (CommandId::AddDeviceNotification, true) => AddNotificationResponse { result: rng.gen(), handle: rng.gen() },
        (CommandId::DeleteDeviceNotification, false) => DeleteNotificationRequest { handle: rng.gen() },
        (CommandId::DeleteDeviceNotification, true) => DeleteNotificationResponse { result: rng.gen() },
        (CommandId::DeviceNotification, _) => {
            let stamps = (0..rng.gen_range(0..5))
                .map(|_| NotificationStamp {
                    timestamp: rng.gen(),
                    samples: (0..rng.gen_range(0..5))
                        .map(|_| Sample { handle: rng.gen(), data: rand_bytes(rng, 40) })
                        .collect(),
                })
                .collect();
            DeviceNotification(NotificationStream { stamps })
        }
        (CommandId::ReadWrite, false) => ReadWriteRequest {
            index_group: rng.gen(),
            index_offset: rng.gen(),
            read_length: rng.gen(),
            write_data: rand_bytes(rng, 300),
        },
        (CommandId::ReadWrite, true) => ReadWriteResponse { result: rng.gen(), data: rand_bytes(rng, 300) },
    }
}

fn rand_address(rng: &mut ChaCha8Rng) -> AmsAddress {
    AmsAddress::new(AmsNetId(rng.gen()), rng.gen())
}

fn round_trip(header: &AmsHeader, payload: &Payload) -> Result<(), String> {
    let bytes = encode_frame(header, payload).map_err(|e| e.to_string())?;
    // Independent layout checks on the prefix and header.
    check(bytes.len() == 38 + payload.encoded_len(), || "frame length".into())?;
    check(bytes[0..2] == [0, 0], || "reserved prefix bytes".into())?;
    check(u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize == bytes.len() - 6, || {
        "tcp length field".into()
    })?;
    check(u16::from_le_bytes(bytes[22..24].try_into().unwrap()) == header.command as u16, || {
        "command id field".into()
    })?;
    check(u32::from_le_bytes(bytes[34..38].try_into().unwrap()) == header.invoke_id, || {
        "invoke id field".into()
    })?;
    match decode_frame(&bytes).map_err(|e| format!("{:?}: {e}", header.command))? {
        Decoded::Frame { frame, consumed } => {
            check(consumed == bytes.len(), || "consumed".into())?;
            check(frame.header == *header && frame.payload == *payload, || {
                format!("{:?} frame changed across the round trip", header.command)
            })
        }
        Decoded::Incomplete { .. } => Err("complete frame reported incomplete".into()),
    }
}

fn codec() -> Outcome {
    const PER_TYPE: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0dec);
    let mut total = 0;
    for cmd in CommandId::ALL {
        let directions: &[bool] = if cmd == CommandId::DeviceNotification { &[false] } else { &[false, true] };
        for &response in directions {
            for _ in 0..PER_TYPE {
                let payload = rand_payload(&mut rng, cmd, response);
                let base = if response { StateFlags::response() } else { StateFlags::request() };
                let header = AmsHeader {
                    target: rand_address(&mut rng),
                    source: rand_address(&mut rng),
                    command: cmd,
                    state_flags: StateFlags((rng.gen::<u16>() & !StateFlags::RESPONSE) | base.0),
                    payload_length: payload.encoded_len() as u32,
                    error_code: if rng.gen_bool(0.2) { rng.gen() } else { 0 },
                    invoke_id: rng.gen(),
                };
                round_trip(&header, &payload)?;
                total += 1;
            }
        }
    }

    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let mut fixtures = 0;
    let mut entries: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("hex"))
        .collect();
    entries.sort();
    for path in entries {
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let bytes: Vec<u8> = text
            .split_whitespace()
            .map(|t| u8::from_str_radix(t, 16))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let frame = match decode_frame(&bytes).map_err(|e| format!("{name}: {e}"))? {
            Decoded::Frame { frame, consumed } if consumed == bytes.len() => frame,
            other => return Err(format!("{name}: {other:?}")),
        };
        let again = encode_frame(&frame.header, &frame.payload).map_err(|e| e.to_string())?;
        check(again == bytes, || format!("{name} not re-encoded bit-exact"))?;
        fixtures += 1;
    }
    check(fixtures >= 30, || format!("only {fixtures} fixtures"))?;
    Ok(format!("{total} random frames ({PER_TYPE} per command and direction), {fixtures} fixtures bit-exact"))
}

// ---- 9: typed round trip ---------------------------------------------------

fn rand_value(rng: &mut ChaCha8Rng, ty: PlcType) -> TypedValue {
    let raw: Vec<u8> = match ty.elem() {
        ScalarType::Bool => (0..ty.elem_count()).map(|_| rng.gen_range(0..=1u8)).collect(),
        _ => (0..ty.size()).map(|_| rng.gen()).collect(),
    };
    TypedValue::from_raw(ty, raw).expect("sized")
}

fn typed_round_trip() -> Outcome {
    const CASES: usize = 1000;
    let plc = paper28();
    let vars = plc.symbols.clone();
    let emb = Embedded::start(plc, ClockMode::Virtual).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let (mut scalars, mut arrays) = (0, 0);
    for var in &vars {
        for i in 0..CASES {
            let v = rand_value(&mut rng, var.ty);
            emb.session.write_value(&var.name, &v).map_err(|e| format!("{} write {i}: {e}", var.name))?;
            let back = emb.session.read_value(&var.name, var.ty).map_err(|e| format!("{} read {i}: {e}", var.name))?;
            check(back == v, || format!("{} case {i}: wrote {:?}, read {:?}", var.name, v.raw(), back.raw()))?;
            check(back.elements().len() == var.ty.elem_count(), || format!("{} element count", var.name))?;
        }
        if var.ty.is_array() {
            arrays += 1;
        } else {
            scalars += 1;
        }
    }
    check(scalars == 14 && arrays == 14, || format!("{scalars} scalar and {arrays} array variables"))?;
    Ok(format!("{} types ({scalars} scalars, {arrays} arrays of 3) x {CASES} random values", vars.len()))
}

// ---- driver ------------------------------------------------------------------

fn run(results: &mut Vec<bool>, id: u32, name: &str, f: impl FnOnce() -> Outcome) {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = started.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL {id:>2} {name}: {d} [{secs:.1}s]"),
    }
    results.push(outcome.is_ok());
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "notification completeness, virtual clock", notify_virtual);
    run(&mut results, 2, "10 kHz notifications, real clock", notify_real);
    run(&mut results, 3, "once-per-cycle sampling", once_per_cycle);
    run(&mut results, 4, "max-delay flush bound", max_delay_bound);

    let desk = run_sync(1000, 1);
    run(&mut results, 5, "28 variables x 1000 ops, loopback", || sync_mirror(desk.as_ref().map_err(Clone::clone)?));
    run(&mut results, 6, "time attribution", || attribution(desk.as_ref().map_err(Clone::clone)?));

    run(&mut results, 7, "handle cache on the wire", handle_cache);
    run(&mut results, 8, "codec soundness", codec);
    run(&mut results, 9, "typed round trip", typed_round_trip);

    // On a shared single core the loopback mean drifts by about 20% over
    // seconds, so every variable is visited once per 1000-op round.
    run(&mut results, 10, "array-vs-scalar parity, 50000 ops", || parity(&run_sync(50_000, 50)?));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

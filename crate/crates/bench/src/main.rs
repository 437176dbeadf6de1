//! `adslab` command line: run the simulator, poke at variables, benchmark.
//!
//! Exit codes: 0 success, 1 runtime failure (one `error kind=... msg=...`
//! line on stderr), 2 usage error.

use std::fs;
use std::io::{self, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use adslab::client::{ClientConfig, Session};
use adslab::codec::{NotificationAttrib, TransMode, AMS_TCP_PORT};
use adslab::sim::{load_symbol_config, ClockMode, PlcConfig, PlcServer, ServerConfig, DEFAULT_CONFIG};
use adslab::time::from_ticks;
use adslab::{AmsAddress, AmsNetId, PlcType, TypedValue};
use adslab_bench::report::{render, BenchReport, Direction, ReportFormat};
use adslab_bench::{bench_notify, bench_sync, counter_program, BenchError, Embedded, NotifyBenchSpec, SyncBenchSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adslab", version, about = "ADS/AMS simulator, client and benchmarks")]
struct Cli {
    /// Log level for diagnostics on stderr.
    #[arg(long, global = true, default_value = "warn")]
    log_level: tracing::Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated PLC until interrupted.
    Serve(ServeArgs),
    /// Read one variable and print its value.
    Read(ReadArgs),
    /// Write one variable.
    Write(WriteArgs),
    /// Print notification samples for one variable.
    Subscribe(SubscribeArgs),
    /// Serial read/write latency per variable.
    BenchSync(BenchSyncArgs),
    /// Notification completeness on the counter.
    BenchNotify(BenchNotifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Clock {
    Real,
    Virtual,
}

impl From<Clock> for ClockMode {
    fn from(c: Clock) -> Self {
        match c {
            Clock::Real => ClockMode::Real,
            Clock::Virtual => ClockMode::Virtual,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
    #[arg(long, default_value_t = AMS_TCP_PORT)]
    port: u16,
    /// AMS NetId of the simulated device.
    #[arg(long, default_value_t = AmsNetId::local())]
    netid: AmsNetId,
    #[arg(long, default_value_t = 851)]
    ads_port: u16,
    /// Symbol/program file; the bundled 28 variables plus counter if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "real")]
    clock: Clock,
    /// Override the program's cycle time.
    #[arg(long)]
    cycle_us: Option<u64>,
}

#[derive(Args, Clone)]
struct ConnArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = AMS_TCP_PORT)]
    port: u16,
    /// Target AMS NetId.
    #[arg(long, default_value_t = AmsNetId::local())]
    netid: AmsNetId,
    #[arg(long, default_value_t = 851)]
    ads_port: u16,
    /// Our AMS NetId.
    #[arg(long, default_value_t = AmsNetId::local())]
    source_netid: AmsNetId,
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
}

/// Like [`ConnArgs`] but the host is optional: without it an in-process
/// simulator is used.
#[derive(Args, Clone)]
struct BenchConnArgs {
    /// Benchmark a running server instead of an in-process one.
    #[arg(long)]
    host: Option<String>,
    #[arg(long, default_value_t = AMS_TCP_PORT)]
    port: u16,
    #[arg(long, default_value_t = AmsNetId::local())]
    netid: AmsNetId,
    #[arg(long, default_value_t = 851)]
    ads_port: u16,
    #[arg(long, default_value_t = AmsNetId::local())]
    source_netid: AmsNetId,
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
}

impl BenchConnArgs {
    fn remote(&self) -> Option<ConnArgs> {
        self.host.clone().map(|host| ConnArgs {
            host,
            port: self.port,
            netid: self.netid,
            ads_port: self.ads_port,
            source_netid: self.source_netid,
            timeout_ms: self.timeout_ms,
        })
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "table")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReadArgs {
    #[command(flatten)]
    conn: ConnArgs,
    #[arg(long)]
    symbol: String,
    /// e.g. LREAL or "ARRAY[0..2] OF INT".
    #[arg(long = "type")]
    ty: PlcType,
}

#[derive(Args)]
struct WriteArgs {
    #[command(flatten)]
    conn: ConnArgs,
    #[arg(long)]
    symbol: String,
    #[arg(long = "type")]
    ty: PlcType,
    /// Comma-separated for arrays.
    #[arg(long)]
    value: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    OnChange,
    Cyclic,
}

#[derive(Args)]
struct SubscribeArgs {
    #[command(flatten)]
    conn: ConnArgs,
    #[arg(long)]
    symbol: String,
    #[arg(long = "type")]
    ty: PlcType,
    #[arg(long, value_enum, default_value = "on-change")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    max_delay_ms: u32,
    #[arg(long, default_value_t = 0)]
    cycle_ms: u32,
    /// Stop after this many samples; run until interrupted if absent.
    #[arg(long)]
    count: Option<u64>,
}

#[derive(Args)]
struct BenchSyncArgs {
    #[command(flatten)]
    conn: BenchConnArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long, default_value_t = adslab_bench::sync::DEFAULT_OPS)]
    ops: u64,
    #[arg(long, default_value_t = adslab_bench::sync::DEFAULT_WARMUP)]
    warmup: u64,
    /// Split the ops into this many passes over all variables.
    #[arg(long, default_value_t = 1)]
    rounds: u64,
    /// Both directions if not given.
    #[arg(long, value_enum)]
    direction: Option<Direction>,
    /// Symbol file listing the variables to measure; the bundled 28 if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of symbol names.
    #[arg(long, value_delimiter = ',')]
    symbols: Vec<String>,
}

#[derive(Args)]
struct BenchNotifyArgs {
    #[command(flatten)]
    conn: BenchConnArgs,
    #[command(flatten)]
    out: OutputArgs,
    #[arg(long, default_value_t = adslab_bench::notify::DEFAULT_CHANGES)]
    changes: u64,
    #[arg(long, default_value_t = 100)]
    cycle_us: u64,
    #[arg(long, value_enum, default_value = "virtual")]
    clock: Clock,
    #[arg(long, default_value = adslab_bench::notify::COUNTER_SYMBOL)]
    symbol: String,
}

#[derive(Debug)]
enum Failure {
    Bench(BenchError),
    Io(String, io::Error),
    Input(String),
    /// The report was printed but is flagged invalid.
    InvalidReport(String),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Bench(e) => e.kind(),
            Failure::Io(..) => "io",
            Failure::Input(_) => "input",
            Failure::InvalidReport(_) => "invalid_report",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Bench(e) => e.to_string(),
            Failure::Io(what, e) => format!("{what}: {e}"),
            Failure::Input(m) | Failure::InvalidReport(m) => m.clone(),
        }
    }
}

impl<E: Into<BenchError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Bench(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_max_level(cli.log_level)
        .with_target(false)
        .init();
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Read(a) => read(a),
        Command::Write(a) => write(a),
        Command::Subscribe(a) => subscribe(a),
        Command::BenchSync(a) => bench_sync_cmd(a),
        Command::BenchNotify(a) => bench_notify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error kind={} msg={:?}", f.kind(), f.message());
            ExitCode::from(1)
        }
    }
}

fn resolve(host: &str, port: u16) -> Result<SocketAddr, Failure> {
    (host, port)
        .to_socket_addrs()
        .map_err(|e| Failure::Io(format!("resolving {host}"), e))?
        .next()
        .ok_or_else(|| Failure::Input(format!("{host} has no address")))
}

fn open(c: &ConnArgs) -> Result<Session, Failure> {
    let mut cfg = ClientConfig::new(resolve(&c.host, c.port)?, AmsAddress::new(c.netid, c.ads_port));
    cfg.source.net_id = c.source_netid;
    cfg.request_timeout = Duration::from_millis(c.timeout_ms);
    Ok(Session::connect(cfg).map_err(BenchError::from)?)
}

fn load_config(path: Option<&PathBuf>) -> Result<PlcConfig, Failure> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Io(format!("reading {}", p.display()), e))?,
        None => DEFAULT_CONFIG.to_owned(),
    };
    Ok(load_symbol_config(&text)?)
}

fn emit(report: &BenchReport, out: &OutputArgs) -> Result<(), Failure> {
    let text = render(report, out.format).map_err(|e| Failure::Io("rendering report".into(), e))?;
    match &out.output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("writing {}", p.display()), e))?,
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io("writing stdout".into(), e))?,
    }
    match &report.error {
        Some(e) if !report.valid => Err(Failure::InvalidReport(e.clone())),
        _ => Ok(()),
    }
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let mut plc = load_config(a.config.as_ref())?;
    if let Some(us) = a.cycle_us {
        plc.task.cycle_time = Duration::from_micros(us);
        if plc.task.cycle_time < adslab::sim::MIN_CYCLE_TIME {
            return Err(Failure::Input("cycle time below the 50 us minimum".into()));
        }
    }
    let mut cfg = ServerConfig::new(plc);
    cfg.bind = resolve(&a.bind, a.port)?;
    cfg.net_id = a.netid;
    cfg.ads_port = a.ads_port;
    cfg.clock = a.clock.into();
    let server = PlcServer::spawn(cfg)?;
    println!("listening on {} as {}", server.local_addr(), server.ams_address());
    let _ = io::stdout().flush();
    loop {
        std::thread::park();
    }
}

fn read(a: ReadArgs) -> Result<(), Failure> {
    let s = open(&a.conn)?;
    let v = s.read_value(&a.symbol, a.ty).map_err(BenchError::from)?;
    println!("{v}");
    Ok(())
}

fn write(a: WriteArgs) -> Result<(), Failure> {
    let v = TypedValue::parse(a.ty, &a.value).map_err(|e| Failure::Input(e.to_string()))?;
    let s = open(&a.conn)?;
    s.write_value(&a.symbol, &v).map_err(BenchError::from)?;
    Ok(())
}

fn subscribe(a: SubscribeArgs) -> Result<(), Failure> {
    let s = open(&a.conn)?;
    // ADS expresses both times in 100 ns units.
    let to_ticks = |ms: u32| ms.saturating_mul(10_000);
    let attrib = NotificationAttrib {
        length: a.ty.size() as u32,
        trans_mode: match a.mode {
            Mode::OnChange => TransMode::ON_CHANGE,
            Mode::Cyclic => TransMode::CYCLIC,
        },
        max_delay: to_ticks(a.max_delay_ms),
        cycle_time: to_ticks(a.cycle_ms),
    };
    let (tx, rx) = std::sync::mpsc::channel::<(u64, Vec<u8>)>();
    let _sub = s
        .subscribe(&a.symbol, attrib, move |ts: u64, d: &[u8]| {
            let _ = tx.send((ts, d.to_vec()));
        })
        .map_err(BenchError::from)?;
    let mut seen = 0u64;
    let mut out = io::stdout().lock();
    while a.count.is_none_or(|c| seen < c) {
        let Ok((ts, data)) = rx.recv_timeout(Duration::from_millis(200)) else {
            if !s.is_connected() {
                return Err(BenchError::Client(adslab::client::ClientError::Disconnected).into());
            }
            continue;
        };
        let value = TypedValue::from_raw(a.ty, data).map_err(|e| Failure::Input(e.to_string()))?;
        let unix = from_ticks(ts);
        let _ = writeln!(out, "{}.{:06} {value}", unix.as_secs(), unix.subsec_micros());
        seen += 1;
    }
    Ok(())
}

fn bench_sync_cmd(a: BenchSyncArgs) -> Result<(), Failure> {
    let plc = match &a.config {
        Some(p) => load_config(Some(p))?,
        None => load_symbol_config(adslab::sim::PAPER28_CONFIG)?,
    };
    let mut variables = plc.symbols.clone();
    if !a.symbols.is_empty() {
        for name in &a.symbols {
            if !variables.iter().any(|v| &v.name == name) {
                return Err(Failure::Input(format!("{name} is not in the symbol file")));
            }
        }
        variables.retain(|v| a.symbols.contains(&v.name));
    }
    let spec = SyncBenchSpec {
        variables,
        ops_per_variable: a.ops,
        directions: a.direction.map_or(vec![Direction::Read, Direction::Write], |d| vec![d]),
        warmup_ops: a.warmup,
        rounds: a.rounds,
    };
    let report = match a.conn.remote() {
        Some(conn) => bench_sync(&open(&conn)?, &spec)?,
        None => {
            let emb = Embedded::start(plc, ClockMode::Virtual)?;
            bench_sync(&emb.session, &spec)?
        }
    };
    emit(&report, &a.out)
}

fn bench_notify_cmd(a: BenchNotifyArgs) -> Result<(), Failure> {
    let cycle = Duration::from_micros(a.cycle_us);
    let mut spec = NotifyBenchSpec::new(a.changes, cycle, a.clock.into());
    spec.symbol = a.symbol;
    let notification = match a.conn.remote() {
        Some(conn) => bench_notify(&open(&conn)?, None, &spec)?,
        None => {
            let emb = Embedded::start(counter_program(cycle)?, spec.clock)?;
            bench_notify(&emb.session, Some(&emb.server), &spec)?
        }
    };
    let report = BenchReport {
        notification: Some(notification),
        ..BenchReport::default()
    };
    emit(&report, &a.out)
}

//! Benchmarks for the ADS stack: serial read/write latency over a set of
//! PLC variables and notification completeness on a fast counter.

pub mod notify;
pub mod report;
pub mod sync;

use std::time::Duration;

use adslab::client::{ClientConfig, ClientError, Session};
use adslab::sim::{load_symbol_config, ClockMode, ConfigError, PlcConfig, PlcServer, ServerConfig, ServerError};
use thiserror::Error;

pub use notify::{bench_notify, NotifyBenchSpec};
pub use report::{BenchReport, Direction, ReportFormat};
pub use sync::{bench_sync, SyncBenchSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark spec: {0}")]
    Spec(&'static str),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no initial notification sample arrived")]
    NoInitialSample,
}

impl BenchError {
    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Spec(_) => "spec",
            BenchError::Client(ClientError::Connect { .. }) => "connect",
            BenchError::Client(ClientError::Timeout { .. }) => "timeout",
            BenchError::Client(ClientError::Disconnected) => "disconnected",
            BenchError::Client(ClientError::Ads { .. }) => "ads",
            BenchError::Client(_) => "client",
            BenchError::Server(_) => "server",
            BenchError::Config(_) => "config",
            BenchError::NoInitialSample => "notification",
        }
    }
}

/// An in-process simulator on a loopback port with a session to it.
pub struct Embedded {
    pub server: PlcServer,
    pub session: Session,
}

impl Embedded {
    /// Under the virtual clock the task does not run by itself; cycles are
    /// stepped through [`PlcServer::run_cycles`].
    pub fn start(plc: PlcConfig, clock: ClockMode) -> Result<Embedded, BenchError> {
        let mut cfg = ServerConfig::loopback(plc);
        cfg.clock = clock;
        cfg.autostart = clock == ClockMode::Real;
        let server = PlcServer::spawn(cfg)?;
        let session = Session::connect(ClientConfig::new(server.local_addr(), server.ams_address()))?;
        Ok(Embedded { server, session })
    }
}

/// Counter program with the given cycle time.
pub fn counter_program(cycle_time: Duration) -> Result<PlcConfig, BenchError> {
    if cycle_time < adslab::sim::MIN_CYCLE_TIME {
        return Err(BenchError::Spec("cycle time below the 50 us minimum"));
    }
    if !cycle_time.as_nanos().is_multiple_of(100) {
        return Err(BenchError::Spec("cycle time must be a multiple of 100 ns"));
    }
    let mut plc = load_symbol_config(adslab::sim::COUNTER_CONFIG)?;
    plc.task.cycle_time = cycle_time;
    Ok(plc)
}

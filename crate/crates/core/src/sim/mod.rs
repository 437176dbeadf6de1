//! A simulated TwinCAT-style PLC served over AMS/TCP.

mod config;
mod plc;
mod server;

pub use config::{
    load_symbol_config, ConfigError, ConfigErrorKind, PlcConfig, ProgramOp, SymbolInfo, TaskConfig,
    COUNTER_CONFIG, DEFAULT_CONFIG, DEFAULT_CYCLE_TIME, MIN_CYCLE_TIME, PAPER28_CONFIG,
};
pub use plc::{ads_state, ConnId, OutgoingStream, Plc, PlcCounters, Registration, DIAGNOSTICS_INDEX_GROUP};
pub use server::{
    ClockMode, PlcServer, ServerConfig, ServerError, ServerStats, DEFAULT_ADS_PORT,
    DEFAULT_OUTBOX_CAPACITY,
};

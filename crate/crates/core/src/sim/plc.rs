//! The simulated PLC: process image, handle tables, the cyclic program and
//! the notification engine. Pure state machine; the TCP server in
//! [`super::server`] drives it.
//!
//! Time is passed in explicitly as ADS ticks (100 ns since 1601), so the
//! same code runs under a real or a virtual clock.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::codec::{
    index_group, AdsCode, AmsAddress, AmsHeader, CommandId, DeviceInfo, NotificationAttrib,
    NotificationStamp, NotificationStream, Payload, Sample, TransMode,
};

use super::config::{PlcConfig, ProgramOp, SymbolInfo, TaskConfig};
use crate::time::to_ticks;

/// Identifies one client connection to the simulator.
pub type ConnId = u64;

/// Index group for simulator diagnostics: offset 0 yields four u64 values,
/// see [`PlcCounters::diagnostics_bytes`].
pub const DIAGNOSTICS_INDEX_GROUP: u32 = 0x0002_0000;

pub mod ads_state {
    pub const RESET: u16 = 2;
    pub const RUN: u16 = 5;
    pub const STOP: u16 = 6;
}

/// Counters exposed through [`DIAGNOSTICS_INDEX_GROUP`] and reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlcCounters {
    pub cycles: u64,
    pub samples_produced: u64,
    pub initial_samples: u64,
    pub handle_lookups: u64,
    pub dropped_streams: u64,
    pub dropped_samples: u64,
    pub overruns: u64,
}

impl PlcCounters {
    /// `[dropped_streams, dropped_samples, cycles, overruns]` as LE u64.
    pub fn diagnostics_bytes(&self) -> Vec<u8> {
        [self.dropped_streams, self.dropped_samples, self.cycles, self.overruns]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// One active device notification.
#[derive(Clone, Debug)]
pub struct Registration {
    pub handle: u32,
    pub symbol: usize,
    pub attrib: NotificationAttrib,
    /// AMS address notifications are sent to.
    pub client: AmsAddress,
    pub last_sent: Option<Vec<u8>>,
    last_checked: u64,
    pub pending: VecDeque<(u64, Vec<u8>)>,
    pub oldest_pending_since: Option<u64>,
}

#[derive(Debug, Default)]
struct Connection {
    symbol_handles: HashMap<u32, usize>,
    handle_of_symbol: HashMap<usize, u32>,
    next_symbol_handle: u32,
    notifications: BTreeMap<u32, Registration>,
    next_notification_handle: u32,
}

impl Connection {
    fn new() -> Self {
        Connection {
            next_symbol_handle: 1,
            next_notification_handle: 1,
            ..Default::default()
        }
    }
}

/// A notification stream addressed to one connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutgoingStream {
    pub conn: ConnId,
    pub client: AmsAddress,
    pub stream: NotificationStream,
}

pub struct Plc {
    symbols: Vec<SymbolInfo>,
    by_name: HashMap<String, usize>,
    by_offset: BTreeMap<u32, usize>,
    memory: Vec<u8>,
    task: TaskConfig,
    ads_port: u16,
    now: u64,
    ads_state: u16,
    connections: BTreeMap<ConnId, Connection>,
    next_conn: ConnId,
    counters: PlcCounters,
    device_info: DeviceInfo,
}

type AdsResult<T> = Result<T, AdsCode>;

impl Plc {
    /// A PLC whose clock starts at `start` ticks; the first cycle runs at
    /// whatever time the driver passes to [`Plc::run_cycle`].
    pub fn new(config: PlcConfig, ads_port: u16, start: u64) -> Self {
        let size: usize = config.symbols.iter().map(|s| s.size as usize).sum();
        let by_name = config
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        let by_offset = config
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.index_offset, i))
            .collect();
        Plc {
            symbols: config.symbols,
            by_name,
            by_offset,
            memory: vec![0; size],
            task: config.task,
            ads_port,
            now: start,
            ads_state: ads_state::RUN,
            connections: BTreeMap::new(),
            next_conn: 1,
            counters: PlcCounters::default(),
            device_info: DeviceInfo::new("adslab-plc", 0, 1, 0),
        }
    }

    pub fn symbols(&self) -> &[SymbolInfo] {
        &self.symbols
    }

    pub fn symbol(&self, name: &str) -> Option<&SymbolInfo> {
        self.by_name.get(name).map(|&i| &self.symbols[i])
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn cycle_ticks(&self) -> u64 {
        to_ticks(self.task.cycle_time)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn counters(&self) -> PlcCounters {
        self.counters
    }

    pub fn counters_mut(&mut self) -> &mut PlcCounters {
        &mut self.counters
    }

    pub fn ads_port(&self) -> u16 {
        self.ads_port
    }

    /// Current bytes of a symbol.
    pub fn value(&self, name: &str) -> Option<&[u8]> {
        self.by_name.get(name).map(|&i| self.symbol_bytes(i))
    }

    fn symbol_bytes(&self, idx: usize) -> &[u8] {
        let s = &self.symbols[idx];
        &self.memory[s.index_offset as usize..][..s.size as usize]
    }

    fn symbol_bytes_mut(&mut self, idx: usize) -> &mut [u8] {
        let s = &self.symbols[idx];
        &mut self.memory[s.index_offset as usize..][..s.size as usize]
    }

    // ---- connections -------------------------------------------------

    pub fn open_connection(&mut self) -> ConnId {
        let id = self.next_conn;
        self.next_conn += 1;
        self.connections.insert(id, Connection::new());
        id
    }

    /// Drop a connection with all its handles and registrations.
    pub fn close_connection(&mut self, conn: ConnId) -> usize {
        self.connections
            .remove(&conn)
            .map(|c| c.notifications.len())
            .unwrap_or(0)
    }

    pub fn registration_count(&self, conn: ConnId) -> usize {
        self.connections.get(&conn).map_or(0, |c| c.notifications.len())
    }

    pub fn registration(&self, conn: ConnId, handle: u32) -> Option<&Registration> {
        self.connections.get(&conn)?.notifications.get(&handle)
    }

    fn conn(&mut self, conn: ConnId) -> AdsResult<&mut Connection> {
        self.connections
            .get_mut(&conn)
            .ok_or(AdsCode::NOTIFICATION_CLIENT_NOT_REGISTERED)
    }

    // ---- symbol handles ----------------------------------------------

    /// Handle for `name`, stable until released or reset.
    pub fn lookup_symbol_handle(&mut self, conn: ConnId, name: &str) -> AdsResult<u32> {
        self.counters.handle_lookups += 1;
        let idx = *self.by_name.get(name).ok_or(AdsCode::SYMBOL_NOT_FOUND)?;
        let c = self.conn(conn)?;
        if let Some(&h) = c.handle_of_symbol.get(&idx) {
            return Ok(h);
        }
        let h = c.next_symbol_handle;
        c.next_symbol_handle = c.next_symbol_handle.checked_add(1).ok_or(AdsCode::NO_MORE_HANDLES)?;
        c.symbol_handles.insert(h, idx);
        c.handle_of_symbol.insert(idx, h);
        Ok(h)
    }

    pub fn release_symbol_handle(&mut self, conn: ConnId, handle: u32) -> AdsResult<()> {
        let c = self.conn(conn)?;
        let idx = c
            .symbol_handles
            .remove(&handle)
            .ok_or(AdsCode::INVALID_INDEX_OFFSET)?;
        c.handle_of_symbol.remove(&idx);
        Ok(())
    }

    /// Invalidate every symbol handle of every connection, as a PLC restart
    /// does. Handle counters keep increasing so old handles stay invalid.
    pub fn reset_symbol_handles(&mut self) {
        for c in self.connections.values_mut() {
            c.symbol_handles.clear();
            c.handle_of_symbol.clear();
        }
    }

    fn resolve_handle(&self, conn: ConnId, handle: u32) -> AdsResult<usize> {
        self.connections
            .get(&conn)
            .and_then(|c| c.symbol_handles.get(&handle).copied())
            .ok_or(AdsCode::INVALID_INDEX_OFFSET)
    }

    /// Read up to the symbol's size from offset 0.
    pub fn read_by_handle(&self, conn: ConnId, handle: u32, length: u32) -> AdsResult<Vec<u8>> {
        let idx = self.resolve_handle(conn, handle)?;
        if length > self.symbols[idx].size {
            return Err(AdsCode::INVALID_SIZE);
        }
        Ok(self.symbol_bytes(idx)[..length as usize].to_vec())
    }

    pub fn write_by_handle(&mut self, conn: ConnId, handle: u32, data: &[u8]) -> AdsResult<()> {
        let idx = self.resolve_handle(conn, handle)?;
        if data.len() != self.symbols[idx].size as usize {
            return Err(AdsCode::INVALID_SIZE);
        }
        self.symbol_bytes_mut(idx).copy_from_slice(data);
        Ok(())
    }

    // ---- generic index-group access ----------------------------------

    fn area_range(&self, offset: u32, length: u32) -> AdsResult<std::ops::Range<usize>> {
        let start = offset as usize;
        let end = start + length as usize;
        if start > self.memory.len() || (start == self.memory.len() && length > 0) {
            return Err(AdsCode::INVALID_INDEX_OFFSET);
        }
        if end > self.memory.len() {
            return Err(AdsCode::INVALID_SIZE);
        }
        Ok(start..end)
    }

    pub fn read(&self, conn: ConnId, group: u32, offset: u32, length: u32) -> AdsResult<Vec<u8>> {
        match group {
            index_group::PLC_DATA => Ok(self.memory[self.area_range(offset, length)?].to_vec()),
            index_group::SYM_VALUE_BY_HANDLE => self.read_by_handle(conn, offset, length),
            DIAGNOSTICS_INDEX_GROUP => {
                let bytes = self.counters.diagnostics_bytes();
                if offset != 0 {
                    return Err(AdsCode::INVALID_INDEX_OFFSET);
                }
                if length as usize > bytes.len() {
                    return Err(AdsCode::INVALID_SIZE);
                }
                Ok(bytes[..length as usize].to_vec())
            }
            _ => Err(AdsCode::INVALID_INDEX_GROUP),
        }
    }

    pub fn write(&mut self, conn: ConnId, group: u32, offset: u32, data: &[u8]) -> AdsResult<()> {
        match group {
            index_group::PLC_DATA => {
                let range = self.area_range(offset, data.len() as u32)?;
                self.memory[range].copy_from_slice(data);
                Ok(())
            }
            index_group::SYM_VALUE_BY_HANDLE => self.write_by_handle(conn, offset, data),
            index_group::SYM_RELEASE_HANDLE => {
                let handle: [u8; 4] = data.try_into().map_err(|_| AdsCode::INVALID_SIZE)?;
                self.release_symbol_handle(conn, u32::from_le_bytes(handle))
            }
            _ => Err(AdsCode::INVALID_INDEX_GROUP),
        }
    }

    pub fn read_write(
        &mut self,
        conn: ConnId,
        group: u32,
        _offset: u32,
        read_length: u32,
        write_data: &[u8],
    ) -> AdsResult<Vec<u8>> {
        // Names may arrive NUL-terminated.
        let name = || {
            let end = write_data.iter().position(|&b| b == 0).unwrap_or(write_data.len());
            std::str::from_utf8(&write_data[..end]).map_err(|_| AdsCode::SYMBOL_NOT_FOUND)
        };
        match group {
            index_group::SYM_HANDLE_BY_NAME => {
                if read_length < 4 {
                    return Err(AdsCode::INVALID_SIZE);
                }
                let name = name()?;
                Ok(self.lookup_symbol_handle(conn, name)?.to_le_bytes().to_vec())
            }
            index_group::SYM_VALUE_BY_NAME => {
                let idx = *self.by_name.get(name()?).ok_or(AdsCode::SYMBOL_NOT_FOUND)?;
                if read_length > self.symbols[idx].size {
                    return Err(AdsCode::INVALID_SIZE);
                }
                Ok(self.symbol_bytes(idx)[..read_length as usize].to_vec())
            }
            _ => Err(AdsCode::SERVICE_NOT_SUPPORTED),
        }
    }

    // ---- notifications -----------------------------------------------

    /// Register a device notification. The current value is queued at once
    /// as the initial sample.
    pub fn add_notification(
        &mut self,
        conn: ConnId,
        client: AmsAddress,
        group: u32,
        offset: u32,
        attrib: NotificationAttrib,
    ) -> AdsResult<u32> {
        if !attrib.trans_mode.is_supported() {
            return Err(AdsCode::TRANSMODE_NOT_SUPPORTED);
        }
        let symbol = match group {
            index_group::PLC_DATA => *self.by_offset.get(&offset).ok_or(AdsCode::SYMBOL_NOT_FOUND)?,
            index_group::SYM_VALUE_BY_HANDLE => self.resolve_handle(conn, offset)?,
            _ => return Err(AdsCode::INVALID_INDEX_GROUP),
        };
        if attrib.length != self.symbols[symbol].size {
            return Err(AdsCode::INVALID_SIZE);
        }
        let now = self.now;
        let current = self.symbol_bytes(symbol).to_vec();
        let c = self.conn(conn)?;
        let handle = c.next_notification_handle;
        c.next_notification_handle = handle.checked_add(1).ok_or(AdsCode::NO_MORE_HANDLES)?;
        c.notifications.insert(
            handle,
            Registration {
                handle,
                symbol,
                attrib,
                client,
                last_sent: Some(current.clone()),
                last_checked: now,
                pending: VecDeque::from([(now, current)]),
                oldest_pending_since: Some(now),
            },
        );
        self.counters.samples_produced += 1;
        self.counters.initial_samples += 1;
        Ok(handle)
    }

    pub fn delete_notification(&mut self, conn: ConnId, handle: u32) -> AdsResult<()> {
        self.connections
            .get_mut(&conn)
            .and_then(|c| c.notifications.remove(&handle))
            .map(|_| ())
            .ok_or(AdsCode::INVALID_NOTIFICATION_HANDLE)
    }

    // ---- the cycle ---------------------------------------------------

    /// Execute one task cycle at time `now`: run the program, sample every
    /// registration at most once, then flush whatever is due.
    pub fn run_cycle(&mut self, now: u64) -> Vec<OutgoingStream> {
        self.now = now;
        self.counters.cycles += 1;
        if self.ads_state == ads_state::RUN {
            for i in 0..self.task.program.len() {
                self.execute(i);
            }
        }
        self.sample(now);
        self.flush_due(now)
    }

    fn execute(&mut self, op_index: usize) {
        match &self.task.program[op_index] {
            ProgramOp::Increment { symbol } => {
                let bytes = self.symbol_bytes_mut(*symbol);
                // Little-endian add with carry is a wrapping increment for
                // every integer width, signed or not.
                for b in bytes.iter_mut() {
                    let (v, carry) = b.overflowing_add(1);
                    *b = v;
                    if !carry {
                        break;
                    }
                }
            }
            ProgramOp::Set { symbol, value } => {
                let (symbol, value) = (*symbol, value.clone());
                self.symbol_bytes_mut(symbol).copy_from_slice(&value);
            }
            ProgramOp::Toggle { symbol } => {
                let b = &mut self.symbol_bytes_mut(*symbol)[0];
                *b = (*b == 0) as u8;
            }
        }
    }

    fn sample(&mut self, now: u64) {
        let Plc { connections, symbols, memory, counters, .. } = self;
        for c in connections.values_mut() {
            for reg in c.notifications.values_mut() {
                let interval = reg.attrib.cycle_time as u64;
                if interval > 0 && now.saturating_sub(reg.last_checked) < interval {
                    continue;
                }
                reg.last_checked = now;
                let s = &symbols[reg.symbol];
                let current = &memory[s.index_offset as usize..][..s.size as usize];
                let emit = reg.attrib.trans_mode == TransMode::CYCLIC
                    || reg.last_sent.as_deref() != Some(current);
                if emit {
                    reg.last_sent = Some(current.to_vec());
                    reg.pending.push_back((now, current.to_vec()));
                    reg.oldest_pending_since.get_or_insert(now);
                    counters.samples_produced += 1;
                }
            }
        }
    }

    /// Emit the pending samples of every registration whose max delay has
    /// elapsed (or whose max delay is zero). One stream per
    /// (connection, client address); stamps are in timestamp order and
    /// samples within a stamp in handle order.
    pub fn flush_due(&mut self, now: u64) -> Vec<OutgoingStream> {
        let mut out = Vec::new();
        for (&conn, c) in self.connections.iter_mut() {
            let mut by_client: BTreeMap<AmsAddress, BTreeMap<u64, Vec<Sample>>> = BTreeMap::new();
            for reg in c.notifications.values_mut() {
                let Some(oldest) = reg.oldest_pending_since else { continue };
                let due = reg.attrib.max_delay == 0
                    || now.saturating_sub(oldest) >= reg.attrib.max_delay as u64;
                if !due {
                    continue;
                }
                let stamps = by_client.entry(reg.client).or_default();
                for (ts, data) in reg.pending.drain(..) {
                    stamps.entry(ts).or_default().push(Sample {
                        handle: reg.handle,
                        data,
                    });
                }
                reg.oldest_pending_since = None;
            }
            for (client, stamps) in by_client {
                out.push(OutgoingStream {
                    conn,
                    client,
                    stream: NotificationStream {
                        stamps: stamps
                            .into_iter()
                            .map(|(timestamp, samples)| NotificationStamp { timestamp, samples })
                            .collect(),
                    },
                });
            }
        }
        out
    }

    // ---- request dispatch --------------------------------------------

    /// Serve one request frame from `conn`. Returns the response, or `None`
    /// for frames that are not answered (responses, notifications).
    pub fn handle_request(
        &mut self,
        conn: ConnId,
        header: &AmsHeader,
        payload: &Payload,
    ) -> Option<(AmsHeader, Payload)> {
        if header.state_flags.is_response() || header.command == CommandId::DeviceNotification {
            return None;
        }
        if header.target.port != self.ads_port {
            let code = AdsCode::TARGET_PORT_NOT_FOUND;
            return Some((header.reply(code.0), Payload::ErrorResponse));
        }
        let reply = match payload {
            Payload::ReadDeviceInfoRequest => Payload::ReadDeviceInfoResponse {
                result: 0,
                info: self.device_info,
            },
            Payload::ReadStateRequest => Payload::ReadStateResponse {
                result: 0,
                ads_state: self.ads_state,
                device_state: 0,
            },
            Payload::WriteControlRequest { ads_state: state, .. } => {
                let result = match *state {
                    ads_state::RESET => {
                        self.reset_symbol_handles();
                        self.ads_state = ads_state::RUN;
                        0
                    }
                    ads_state::RUN | ads_state::STOP => {
                        self.ads_state = *state;
                        0
                    }
                    _ => AdsCode::INVALID_STATE.0,
                };
                Payload::WriteControlResponse { result }
            }
            Payload::ReadRequest { index_group, index_offset, length } => {
                match self.read(conn, *index_group, *index_offset, *length) {
                    Ok(data) => Payload::ReadResponse { result: 0, data },
                    Err(code) => Payload::failure(CommandId::Read, code),
                }
            }
            Payload::WriteRequest { index_group, index_offset, data } => Payload::WriteResponse {
                result: code_of(self.write(conn, *index_group, *index_offset, data)),
            },
            Payload::ReadWriteRequest { index_group, index_offset, read_length, write_data } => {
                match self.read_write(conn, *index_group, *index_offset, *read_length, write_data) {
                    Ok(data) => Payload::ReadWriteResponse { result: 0, data },
                    Err(code) => Payload::failure(CommandId::ReadWrite, code),
                }
            }
            Payload::AddNotificationRequest { index_group, index_offset, attrib } => {
                match self.add_notification(conn, header.source, *index_group, *index_offset, *attrib) {
                    Ok(handle) => Payload::AddNotificationResponse { result: 0, handle },
                    Err(code) => Payload::failure(CommandId::AddDeviceNotification, code),
                }
            }
            Payload::DeleteNotificationRequest { handle } => Payload::DeleteNotificationResponse {
                result: code_of(self.delete_notification(conn, *handle)),
            },
            // Responses and notifications were filtered above.
            _ => return None,
        };
        Some((header.reply(0), reply))
    }
}

fn code_of(r: AdsResult<()>) -> u32 {
    r.err().unwrap_or(AdsCode::NO_ERROR).0
}

use super::header::CommandId;
use super::notification::{decode_notification_stream, NotificationAttrib, NotificationStream};
use super::wire::{put_u16, put_u32, Cursor};
use super::{AdsCode, ProtocolError};

/// Device name and version returned by ReadDeviceInfo.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeviceInfo {
    pub major: u8,
    pub minor: u8,
    pub build: u16,
    /// NUL-padded ASCII name.
    pub name: [u8; 16],
}

impl DeviceInfo {
    pub fn new(name: &str, major: u8, minor: u8, build: u16) -> Self {
        let mut buf = [0u8; 16];
        let n = name.len().min(15);
        buf[..n].copy_from_slice(&name.as_bytes()[..n]);
        DeviceInfo {
            major,
            minor,
            build,
            name: buf,
        }
    }

    pub fn name_str(&self) -> String {
        let end = self.name.iter().position(|&b| b == 0).unwrap_or(16);
        String::from_utf8_lossy(&self.name[..end]).into_owned()
    }
}

/// Command payload, one variant per (command, direction).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    ReadDeviceInfoRequest,
    ReadDeviceInfoResponse { result: u32, info: DeviceInfo },
    ReadRequest { index_group: u32, index_offset: u32, length: u32 },
    ReadResponse { result: u32, data: Vec<u8> },
    WriteRequest { index_group: u32, index_offset: u32, data: Vec<u8> },
    WriteResponse { result: u32 },
    ReadStateRequest,
    ReadStateResponse { result: u32, ads_state: u16, device_state: u16 },
    WriteControlRequest { ads_state: u16, device_state: u16, data: Vec<u8> },
    WriteControlResponse { result: u32 },
    AddNotificationRequest { index_group: u32, index_offset: u32, attrib: NotificationAttrib },
    AddNotificationResponse { result: u32, handle: u32 },
    DeleteNotificationRequest { handle: u32 },
    DeleteNotificationResponse { result: u32 },
    DeviceNotification(NotificationStream),
    ReadWriteRequest { index_group: u32, index_offset: u32, read_length: u32, write_data: Vec<u8> },
    ReadWriteResponse { result: u32, data: Vec<u8> },
    /// A response whose payload is empty because the AMS header already
    /// carries a nonzero error code (routers answer this way).
    ErrorResponse,
}

// AddDeviceNotification requests end with 16 reserved bytes.
const ADD_NOTIF_RESERVED: usize = 16;

impl Payload {
    /// The command this payload belongs to; `None` for [`Payload::ErrorResponse`],
    /// which fits any command.
    pub fn command(&self) -> Option<CommandId> {
        use Payload::*;
        Some(match self {
            ReadDeviceInfoRequest | ReadDeviceInfoResponse { .. } => CommandId::ReadDeviceInfo,
            ReadRequest { .. } | ReadResponse { .. } => CommandId::Read,
            WriteRequest { .. } | WriteResponse { .. } => CommandId::Write,
            ReadStateRequest | ReadStateResponse { .. } => CommandId::ReadState,
            WriteControlRequest { .. } | WriteControlResponse { .. } => CommandId::WriteControl,
            AddNotificationRequest { .. } | AddNotificationResponse { .. } => {
                CommandId::AddDeviceNotification
            }
            DeleteNotificationRequest { .. } | DeleteNotificationResponse { .. } => {
                CommandId::DeleteDeviceNotification
            }
            DeviceNotification(_) => CommandId::DeviceNotification,
            ReadWriteRequest { .. } | ReadWriteResponse { .. } => CommandId::ReadWrite,
            ErrorResponse => return None,
        })
    }

    pub fn is_response(&self) -> bool {
        use Payload::*;
        matches!(
            self,
            ReadDeviceInfoResponse { .. }
                | ReadResponse { .. }
                | WriteResponse { .. }
                | ReadStateResponse { .. }
                | WriteControlResponse { .. }
                | AddNotificationResponse { .. }
                | DeleteNotificationResponse { .. }
                | ReadWriteResponse { .. }
                | ErrorResponse
        )
    }

    /// The `result` field of a response payload.
    pub fn result(&self) -> Option<AdsCode> {
        use Payload::*;
        match self {
            ReadDeviceInfoResponse { result, .. }
            | ReadResponse { result, .. }
            | WriteResponse { result }
            | ReadStateResponse { result, .. }
            | WriteControlResponse { result }
            | AddNotificationResponse { result, .. }
            | DeleteNotificationResponse { result }
            | ReadWriteResponse { result, .. } => Some(AdsCode(*result)),
            _ => None,
        }
    }

    /// The response variant for `command` carrying `code` and no data.
    pub fn failure(command: CommandId, code: AdsCode) -> Payload {
        let result = code.0;
        match command {
            CommandId::ReadDeviceInfo => Payload::ReadDeviceInfoResponse {
                result,
                info: DeviceInfo::new("", 0, 0, 0),
            },
            CommandId::Read => Payload::ReadResponse { result, data: Vec::new() },
            CommandId::Write => Payload::WriteResponse { result },
            CommandId::ReadState => Payload::ReadStateResponse {
                result,
                ads_state: 0,
                device_state: 0,
            },
            CommandId::WriteControl => Payload::WriteControlResponse { result },
            CommandId::AddDeviceNotification => Payload::AddNotificationResponse { result, handle: 0 },
            CommandId::DeleteDeviceNotification => Payload::DeleteNotificationResponse { result },
            CommandId::ReadWrite => Payload::ReadWriteResponse { result, data: Vec::new() },
            CommandId::DeviceNotification => Payload::ErrorResponse,
        }
    }

    pub fn encoded_len(&self) -> usize {
        use Payload::*;
        match self {
            ReadDeviceInfoRequest | ReadStateRequest | ErrorResponse => 0,
            ReadDeviceInfoResponse { .. } => 24,
            ReadRequest { .. } => 12,
            ReadResponse { data, .. } | ReadWriteResponse { data, .. } => 8 + data.len(),
            WriteRequest { data, .. } => 12 + data.len(),
            WriteResponse { .. }
            | WriteControlResponse { .. }
            | DeleteNotificationResponse { .. }
            | DeleteNotificationRequest { .. } => 4,
            ReadStateResponse { .. } => 8,
            WriteControlRequest { data, .. } => 8 + data.len(),
            AddNotificationRequest { .. } => 8 + NotificationAttrib::ENCODED_LEN + ADD_NOTIF_RESERVED,
            AddNotificationResponse { .. } => 8,
            DeviceNotification(stream) => stream.encoded_len(),
            ReadWriteRequest { write_data, .. } => 16 + write_data.len(),
        }
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        use Payload::*;
        match self {
            ReadDeviceInfoRequest | ReadStateRequest | ErrorResponse => {}
            ReadDeviceInfoResponse { result, info } => {
                put_u32(out, *result);
                out.push(info.major);
                out.push(info.minor);
                put_u16(out, info.build);
                out.extend_from_slice(&info.name);
            }
            ReadRequest { index_group, index_offset, length } => {
                put_u32(out, *index_group);
                put_u32(out, *index_offset);
                put_u32(out, *length);
            }
            ReadResponse { result, data } | ReadWriteResponse { result, data } => {
                put_u32(out, *result);
                put_u32(out, data.len() as u32);
                out.extend_from_slice(data);
            }
            WriteRequest { index_group, index_offset, data } => {
                put_u32(out, *index_group);
                put_u32(out, *index_offset);
                put_u32(out, data.len() as u32);
                out.extend_from_slice(data);
            }
            WriteResponse { result }
            | WriteControlResponse { result }
            | DeleteNotificationResponse { result } => put_u32(out, *result),
            ReadStateResponse { result, ads_state, device_state } => {
                put_u32(out, *result);
                put_u16(out, *ads_state);
                put_u16(out, *device_state);
            }
            WriteControlRequest { ads_state, device_state, data } => {
                put_u16(out, *ads_state);
                put_u16(out, *device_state);
                put_u32(out, data.len() as u32);
                out.extend_from_slice(data);
            }
            AddNotificationRequest { index_group, index_offset, attrib } => {
                put_u32(out, *index_group);
                put_u32(out, *index_offset);
                attrib.encode_into(out);
                out.extend_from_slice(&[0; ADD_NOTIF_RESERVED]);
            }
            AddNotificationResponse { result, handle } => {
                put_u32(out, *result);
                put_u32(out, *handle);
            }
            DeleteNotificationRequest { handle } => put_u32(out, *handle),
            DeviceNotification(stream) => stream.encode_into(out),
            ReadWriteRequest { index_group, index_offset, read_length, write_data } => {
                put_u32(out, *index_group);
                put_u32(out, *index_offset);
                put_u32(out, *read_length);
                put_u32(out, write_data.len() as u32);
                out.extend_from_slice(write_data);
            }
        }
    }

    /// Decode a payload whose variant is selected by command and direction.
    /// `bytes` must be exactly the payload; both short and long inputs are
    /// rejected.
    pub fn decode(
        command: CommandId,
        response: bool,
        error_code: u32,
        bytes: &[u8],
    ) -> Result<Payload, ProtocolError> {
        if response && error_code != 0 && bytes.is_empty() {
            return Ok(Payload::ErrorResponse);
        }
        let mut cur = Cursor::new(bytes);
        let payload = Self::decode_fields(command, response, &mut cur)
            .ok_or(ProtocolError::PayloadSize {
                command,
                response,
                actual: bytes.len(),
            })??;
        if cur.remaining() != 0 {
            return Err(ProtocolError::PayloadSize {
                command,
                response,
                actual: bytes.len(),
            });
        }
        Ok(payload)
    }

    // Outer None: ran out of bytes. Inner Err: structurally wrong.
    fn decode_fields(
        command: CommandId,
        response: bool,
        cur: &mut Cursor,
    ) -> Option<Result<Payload, ProtocolError>> {
        use Payload::*;
        // Length-prefixed data must fill the rest of the payload exactly.
        fn sized(cur: &mut Cursor) -> Option<Vec<u8>> {
            let len = cur.u32()? as usize;
            if len != cur.remaining() {
                return None;
            }
            cur.take(len).map(<[u8]>::to_vec)
        }
        let payload = match (command, response) {
            (CommandId::ReadDeviceInfo, false) => ReadDeviceInfoRequest,
            (CommandId::ReadDeviceInfo, true) => ReadDeviceInfoResponse {
                result: cur.u32()?,
                info: DeviceInfo {
                    major: cur.u8()?,
                    minor: cur.u8()?,
                    build: cur.u16()?,
                    name: cur.array()?,
                },
            },
            (CommandId::Read, false) => ReadRequest {
                index_group: cur.u32()?,
                index_offset: cur.u32()?,
                length: cur.u32()?,
            },
            (CommandId::Read, true) => ReadResponse {
                result: cur.u32()?,
                data: sized(cur)?,
            },
            (CommandId::Write, false) => WriteRequest {
                index_group: cur.u32()?,
                index_offset: cur.u32()?,
                data: sized(cur)?,
            },
            (CommandId::Write, true) => WriteResponse { result: cur.u32()? },
            (CommandId::ReadState, false) => ReadStateRequest,
            (CommandId::ReadState, true) => ReadStateResponse {
                result: cur.u32()?,
                ads_state: cur.u16()?,
                device_state: cur.u16()?,
            },
            (CommandId::WriteControl, false) => WriteControlRequest {
                ads_state: cur.u16()?,
                device_state: cur.u16()?,
                data: sized(cur)?,
            },
            (CommandId::WriteControl, true) => WriteControlResponse { result: cur.u32()? },
            (CommandId::AddDeviceNotification, false) => {
                let p = AddNotificationRequest {
                    index_group: cur.u32()?,
                    index_offset: cur.u32()?,
                    attrib: NotificationAttrib::decode(cur)?,
                };
                cur.take(ADD_NOTIF_RESERVED)?;
                p
            }
            (CommandId::AddDeviceNotification, true) => AddNotificationResponse {
                result: cur.u32()?,
                handle: cur.u32()?,
            },
            (CommandId::DeleteDeviceNotification, false) => {
                DeleteNotificationRequest { handle: cur.u32()? }
            }
            (CommandId::DeleteDeviceNotification, true) => {
                DeleteNotificationResponse { result: cur.u32()? }
            }
            (CommandId::DeviceNotification, false) => {
                let rest = cur.take(cur.remaining())?;
                match decode_notification_stream(rest) {
                    Ok(stream) => DeviceNotification(stream),
                    Err(e) => return Some(Err(e)),
                }
            }
            (CommandId::DeviceNotification, true) => {
                return Some(Err(ProtocolError::UnexpectedResponse(command)))
            }
            (CommandId::ReadWrite, false) => ReadWriteRequest {
                index_group: cur.u32()?,
                index_offset: cur.u32()?,
                read_length: cur.u32()?,
                write_data: sized(cur)?,
            },
            (CommandId::ReadWrite, true) => ReadWriteResponse {
                result: cur.u32()?,
                data: sized(cur)?,
            },
        };
        Some(Ok(payload))
    }
}

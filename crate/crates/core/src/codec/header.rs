use std::fmt;

use super::address::{AmsAddress, AmsNetId};
use super::wire::Cursor;
use super::ProtocolError;

/// Size of the AMS/TCP prefix: two reserved bytes plus a u32 length.
pub const AMS_TCP_HEADER_LEN: usize = 6;
/// Size of the AMS header that follows the AMS/TCP prefix.
pub const AMS_HEADER_LEN: usize = 32;

/// ADS command identifiers.
#[repr(u16)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CommandId {
    ReadDeviceInfo = 1,
    Read = 2,
    Write = 3,
    ReadState = 4,
    WriteControl = 5,
    AddDeviceNotification = 6,
    DeleteDeviceNotification = 7,
    /// Pushed by the server only; never answered.
    DeviceNotification = 8,
    ReadWrite = 9,
}

impl CommandId {
    pub const ALL: [CommandId; 9] = [
        CommandId::ReadDeviceInfo,
        CommandId::Read,
        CommandId::Write,
        CommandId::ReadState,
        CommandId::WriteControl,
        CommandId::AddDeviceNotification,
        CommandId::DeleteDeviceNotification,
        CommandId::DeviceNotification,
        CommandId::ReadWrite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommandId::ReadDeviceInfo => "ReadDeviceInfo",
            CommandId::Read => "Read",
            CommandId::Write => "Write",
            CommandId::ReadState => "ReadState",
            CommandId::WriteControl => "WriteControl",
            CommandId::AddDeviceNotification => "AddDeviceNotification",
            CommandId::DeleteDeviceNotification => "DeleteDeviceNotification",
            CommandId::DeviceNotification => "DeviceNotification",
            CommandId::ReadWrite => "ReadWrite",
        }
    }
}

impl TryFrom<u16> for CommandId {
    type Error = ProtocolError;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        CommandId::ALL
            .into_iter()
            .find(|c| *c as u16 == value)
            .ok_or(ProtocolError::UnknownCommand(value))
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The AMS state-flag word. Bits other than the two named ones are kept
/// verbatim through decode and encode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StateFlags(pub u16);

impl StateFlags {
    pub const RESPONSE: u16 = 0x0001;
    pub const ADS_COMMAND: u16 = 0x0004;

    pub const fn request() -> Self {
        StateFlags(Self::ADS_COMMAND)
    }

    pub const fn response() -> Self {
        StateFlags(Self::ADS_COMMAND | Self::RESPONSE)
    }

    pub fn is_response(self) -> bool {
        self.0 & Self::RESPONSE != 0
    }

    pub fn is_ads_command(self) -> bool {
        self.0 & Self::ADS_COMMAND != 0
    }

    /// The same flags with the response bit set.
    pub fn as_response(self) -> Self {
        StateFlags(self.0 | Self::RESPONSE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AmsHeader {
    pub target: AmsAddress,
    pub source: AmsAddress,
    pub command: CommandId,
    pub state_flags: StateFlags,
    pub payload_length: u32,
    pub error_code: u32,
    pub invoke_id: u32,
}

impl AmsHeader {
    pub fn request(target: AmsAddress, source: AmsAddress, command: CommandId, invoke_id: u32) -> Self {
        AmsHeader {
            target,
            source,
            command,
            state_flags: StateFlags::request(),
            payload_length: 0,
            error_code: 0,
            invoke_id,
        }
    }

    /// Header for the reply to `self`: addresses swapped, response bit set,
    /// invoke id echoed.
    pub fn reply(&self, error_code: u32) -> Self {
        AmsHeader {
            target: self.source,
            source: self.target,
            command: self.command,
            state_flags: self.state_flags.as_response(),
            payload_length: 0,
            error_code,
            invoke_id: self.invoke_id,
        }
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.target.net_id.0);
        out.extend_from_slice(&self.target.port.to_le_bytes());
        out.extend_from_slice(&self.source.net_id.0);
        out.extend_from_slice(&self.source.port.to_le_bytes());
        out.extend_from_slice(&(self.command as u16).to_le_bytes());
        out.extend_from_slice(&self.state_flags.0.to_le_bytes());
        out.extend_from_slice(&self.payload_length.to_le_bytes());
        out.extend_from_slice(&self.error_code.to_le_bytes());
        out.extend_from_slice(&self.invoke_id.to_le_bytes());
    }

    /// Decodes exactly [`AMS_HEADER_LEN`] bytes.
    pub(crate) fn decode(bytes: &[u8; AMS_HEADER_LEN]) -> Result<Self, ProtocolError> {
        let mut cur = Cursor::new(bytes);
        // The cursor cannot run short on a fixed 32-byte array.
        let address = |cur: &mut Cursor| {
            let net: [u8; 6] = cur.array().expect("fixed header");
            AmsAddress::new(AmsNetId(net), cur.u16().expect("fixed header"))
        };
        let target = address(&mut cur);
        let source = address(&mut cur);
        let command = CommandId::try_from(cur.u16().expect("fixed header"))?;
        Ok(AmsHeader {
            target,
            source,
            command,
            state_flags: StateFlags(cur.u16().expect("fixed header")),
            payload_length: cur.u32().expect("fixed header"),
            error_code: cur.u32().expect("fixed header"),
            invoke_id: cur.u32().expect("fixed header"),
        })
    }
}

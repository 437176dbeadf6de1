//! AMS/TCP framing, the AMS header, and ADS command payloads.
//!
//! A frame on the wire is
//!
//! ```text
//! [0, 0] [length: u32]            AMS/TCP prefix, length = 32 + payload
//! [AMS header: 32 bytes]
//! [payload: payload_length bytes]
//! ```
//!
//! with every integer little-endian. The codec does no I/O; both the client
//! and the simulated server use [`decode_frame`] / [`FrameBuffer`] to split
//! a byte stream into frames.

mod address;
mod header;
mod notification;
mod payload;
mod return_code;
pub(crate) mod wire;

use thiserror::Error;

pub use address::{parse_net_id, AmsAddress, AmsNetId, ParseNetIdError};
pub use header::{AmsHeader, CommandId, StateFlags, AMS_HEADER_LEN, AMS_TCP_HEADER_LEN};
pub use notification::{
    decode_notification_stream, NotificationAttrib, NotificationStamp, NotificationStream, Sample,
    TransMode,
};
pub use payload::{DeviceInfo, Payload};
pub use return_code::AdsCode;

/// Frames larger than this are treated as corruption.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

/// Standard AMS/TCP port.
pub const AMS_TCP_PORT: u16 = 48898;

/// Well-known ADS index groups.
pub mod index_group {
    /// Get a symbol handle by name (ReadWrite, write data = name).
    pub const SYM_HANDLE_BY_NAME: u32 = 0xF003;
    /// Read or write a value by symbol name (ReadWrite).
    pub const SYM_VALUE_BY_NAME: u32 = 0xF004;
    /// Read or write a value by handle; the handle is the index offset.
    pub const SYM_VALUE_BY_HANDLE: u32 = 0xF005;
    /// Release a symbol handle (Write, data = handle).
    pub const SYM_RELEASE_HANDLE: u32 = 0xF006;
    /// PLC data area addressed by byte offset.
    pub const PLC_DATA: u32 = 0x4020;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("reserved AMS/TCP bytes are {0:#06x}, expected 0")]
    ReservedBytes(u16),
    #[error("unknown ADS command id {0}")]
    UnknownCommand(u16),
    #[error("frame of {0} bytes exceeds the maximum frame size")]
    FrameTooLarge(usize),
    #[error("AMS/TCP length {tcp_length} disagrees with AMS payload length {payload_length} + 32")]
    LengthMismatch { tcp_length: u32, payload_length: u32 },
    #[error("{command} {} payload has inconsistent size {actual}", if *.response { "response" } else { "request" })]
    PayloadSize {
        command: CommandId,
        response: bool,
        actual: usize,
    },
    #[error("notification stream declares {declared} bytes but carries {actual}")]
    NotificationLength { declared: usize, actual: usize },
    #[error("notification stream malformed at stamp {stamp}{}: {reason}", .sample.map(|s| format!(" sample {s}")).unwrap_or_default())]
    NotificationLayout {
        stamp: usize,
        sample: Option<usize>,
        reason: &'static str,
    },
    #[error("{0} is never sent as a response")]
    UnexpectedResponse(CommandId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("header command {header} does not match payload for {payload:?}")]
    CommandMismatch {
        header: CommandId,
        payload: Option<CommandId>,
    },
    #[error("header response flag ({header_response}) does not match payload direction")]
    DirectionMismatch { header_response: bool },
    #[error("payload of {0} bytes exceeds the maximum frame size")]
    TooLarge(usize),
}

/// A decoded header with its payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub header: AmsHeader,
    pub payload: Payload,
}

/// Outcome of [`decode_frame`] on a possibly partial buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decoded {
    Frame { frame: Frame, consumed: usize },
    /// Not enough bytes yet. `needed` is exact once the 6-byte prefix is
    /// present, otherwise the bytes missing from the prefix.
    Incomplete { needed: usize },
}

/// Serialize a frame. The header's `payload_length` is recomputed from the
/// payload.
pub fn encode_frame(header: &AmsHeader, payload: &Payload) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(AMS_TCP_HEADER_LEN + AMS_HEADER_LEN + payload.encoded_len());
    encode_frame_into(header, payload, &mut out)?;
    Ok(out)
}

/// Like [`encode_frame`], appending to `out`.
pub fn encode_frame_into(
    header: &AmsHeader,
    payload: &Payload,
    out: &mut Vec<u8>,
) -> Result<(), EncodeError> {
    if let Some(cmd) = payload.command() {
        if cmd != header.command {
            return Err(EncodeError::CommandMismatch {
                header: header.command,
                payload: Some(cmd),
            });
        }
    } else if header.error_code == 0 {
        // An empty error response only makes sense with a header error code.
        return Err(EncodeError::CommandMismatch {
            header: header.command,
            payload: None,
        });
    }
    if payload.is_response() != header.state_flags.is_response() {
        return Err(EncodeError::DirectionMismatch {
            header_response: header.state_flags.is_response(),
        });
    }
    let payload_len = payload.encoded_len();
    if payload_len + AMS_HEADER_LEN > MAX_FRAME_LEN {
        return Err(EncodeError::TooLarge(payload_len));
    }
    let header = AmsHeader {
        payload_length: payload_len as u32,
        ..*header
    };
    out.reserve(AMS_TCP_HEADER_LEN + AMS_HEADER_LEN + payload_len);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&((AMS_HEADER_LEN + payload_len) as u32).to_le_bytes());
    header.encode_into(out);
    payload.encode_into(out);
    Ok(())
}

/// Total frame length announced by an AMS/TCP prefix, or `None` if fewer
/// than 6 bytes are available.
pub fn frame_length(prefix: &[u8]) -> Result<Option<usize>, ProtocolError> {
    if prefix.len() < AMS_TCP_HEADER_LEN {
        return Ok(None);
    }
    let reserved = u16::from_le_bytes([prefix[0], prefix[1]]);
    if reserved != 0 {
        return Err(ProtocolError::ReservedBytes(reserved));
    }
    let len = u32::from_le_bytes(prefix[2..6].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    if len < AMS_HEADER_LEN {
        return Err(ProtocolError::LengthMismatch {
            tcp_length: len as u32,
            payload_length: 0,
        });
    }
    Ok(Some(AMS_TCP_HEADER_LEN + len))
}

/// Decode the first frame in `bytes`. Trailing bytes beyond the frame are
/// left untouched and reported through `consumed`.
pub fn decode_frame(bytes: &[u8]) -> Result<Decoded, ProtocolError> {
    let total = match frame_length(bytes)? {
        None => {
            return Ok(Decoded::Incomplete {
                needed: AMS_TCP_HEADER_LEN - bytes.len(),
            })
        }
        Some(total) => total,
    };
    if bytes.len() < total {
        return Ok(Decoded::Incomplete {
            needed: total - bytes.len(),
        });
    }
    let frame = decode_frame_body(&bytes[AMS_TCP_HEADER_LEN..total])?;
    Ok(Decoded::Frame {
        frame,
        consumed: total,
    })
}

/// Decode the AMS header and payload that follow an AMS/TCP prefix.
/// `body` must be exactly the bytes announced by the prefix.
pub fn decode_frame_body(body: &[u8]) -> Result<Frame, ProtocolError> {
    let head: &[u8; AMS_HEADER_LEN] = body
        .get(..AMS_HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(ProtocolError::LengthMismatch {
            tcp_length: body.len() as u32,
            payload_length: 0,
        })?;
    let header = AmsHeader::decode(head)?;
    let payload_bytes = &body[AMS_HEADER_LEN..];
    if payload_bytes.len() != header.payload_length as usize {
        return Err(ProtocolError::LengthMismatch {
            tcp_length: body.len() as u32,
            payload_length: header.payload_length,
        });
    }
    let payload = Payload::decode(
        header.command,
        header.state_flags.is_response(),
        header.error_code,
        payload_bytes,
    )?;
    Ok(Frame { header, payload })
}

/// Accumulates bytes from a stream and yields complete frames.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Pop the next complete frame, if one is buffered.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, ProtocolError> {
        match decode_frame(&self.buf)? {
            Decoded::Incomplete { .. } => Ok(None),
            Decoded::Frame { frame, consumed } => {
                self.buf.drain(..consumed);
                Ok(Some(frame))
            }
        }
    }
}

use super::wire::{put_u32, put_u64, Cursor};
use super::ProtocolError;

/// How the server decides when to sample a subscribed variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TransMode(pub u32);

impl TransMode {
    /// Sample every `cycle_time` regardless of change.
    pub const CYCLIC: TransMode = TransMode(3);
    /// Sample only when the value differs from the last one sent.
    pub const ON_CHANGE: TransMode = TransMode(4);

    pub fn is_supported(self) -> bool {
        self == Self::CYCLIC || self == Self::ON_CHANGE
    }
}

/// Subscription parameters of an AddDeviceNotification request.
///
/// `max_delay` and `cycle_time` are in 100 ns units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NotificationAttrib {
    pub length: u32,
    pub trans_mode: TransMode,
    pub max_delay: u32,
    pub cycle_time: u32,
}

impl NotificationAttrib {
    pub const ENCODED_LEN: usize = 16;

    pub fn on_change(length: u32, max_delay: u32, cycle_time: u32) -> Self {
        NotificationAttrib {
            length,
            trans_mode: TransMode::ON_CHANGE,
            max_delay,
            cycle_time,
        }
    }

    pub fn cyclic(length: u32, max_delay: u32, cycle_time: u32) -> Self {
        NotificationAttrib {
            length,
            trans_mode: TransMode::CYCLIC,
            max_delay,
            cycle_time,
        }
    }

    /// Checks `length >= 1` and a supported transmission mode.
    pub fn is_valid(&self) -> bool {
        self.length >= 1 && self.trans_mode.is_supported()
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        put_u32(out, self.length);
        put_u32(out, self.trans_mode.0);
        put_u32(out, self.max_delay);
        put_u32(out, self.cycle_time);
    }

    pub(crate) fn decode(cur: &mut Cursor) -> Option<Self> {
        Some(NotificationAttrib {
            length: cur.u32()?,
            trans_mode: TransMode(cur.u32()?),
            max_delay: cur.u32()?,
            cycle_time: cur.u32()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub handle: u32,
    pub data: Vec<u8>,
}

/// Samples sharing one timestamp (100 ns units since 1601-01-01 UTC).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NotificationStamp {
    pub timestamp: u64,
    pub samples: Vec<Sample>,
}

/// The payload of a DeviceNotification frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NotificationStream {
    pub stamps: Vec<NotificationStamp>,
}

impl NotificationStream {
    /// Bytes after the leading length field.
    fn body_len(&self) -> usize {
        4 + self
            .stamps
            .iter()
            .map(|s| 12 + s.samples.iter().map(|x| 8 + x.data.len()).sum::<usize>())
            .sum::<usize>()
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.body_len()
    }

    pub fn sample_count(&self) -> usize {
        self.stamps.iter().map(|s| s.samples.len()).sum()
    }

    pub fn is_ordered(&self) -> bool {
        self.stamps.windows(2).all(|w| w[0].timestamp <= w[1].timestamp)
    }

    /// All samples in wire order, paired with their stamp's timestamp.
    pub fn samples(&self) -> impl Iterator<Item = (u64, &Sample)> {
        self.stamps
            .iter()
            .flat_map(|st| st.samples.iter().map(move |s| (st.timestamp, s)))
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        put_u32(out, self.body_len() as u32);
        put_u32(out, self.stamps.len() as u32);
        for stamp in &self.stamps {
            put_u64(out, stamp.timestamp);
            put_u32(out, stamp.samples.len() as u32);
            for sample in &stamp.samples {
                put_u32(out, sample.handle);
                put_u32(out, sample.data.len() as u32);
                out.extend_from_slice(&sample.data);
            }
        }
    }
}

fn layout_err(stamp: usize, sample: Option<usize>, reason: &'static str) -> ProtocolError {
    ProtocolError::NotificationLayout { stamp, sample, reason }
}

/// Parse the payload of a DeviceNotification command.
///
/// The declared stream length must cover exactly the bytes given; a
/// mismatch is reported with the index of the stamp or sample where the
/// bytes ran out or were left over.
pub fn decode_notification_stream(data: &[u8]) -> Result<NotificationStream, ProtocolError> {
    let mut cur = Cursor::new(data);
    let declared = cur.u32().ok_or(layout_err(0, None, "missing stream length"))? as usize;
    if declared != cur.remaining() {
        return Err(ProtocolError::NotificationLength {
            declared,
            actual: cur.remaining(),
        });
    }
    let count = cur.u32().ok_or(layout_err(0, None, "missing stamp count"))? as usize;
    // Each stamp needs at least 12 bytes; bound the preallocation by what
    // could actually be present.
    let mut stamps = Vec::with_capacity(count.min(cur.remaining() / 12));
    for si in 0..count {
        let timestamp = cur.u64().ok_or(layout_err(si, None, "truncated stamp timestamp"))?;
        let n = cur.u32().ok_or(layout_err(si, None, "truncated sample count"))? as usize;
        let mut samples = Vec::with_capacity(n.min(cur.remaining() / 8));
        for xi in 0..n {
            let handle = cur.u32().ok_or(layout_err(si, Some(xi), "truncated sample handle"))?;
            let size = cur.u32().ok_or(layout_err(si, Some(xi), "truncated sample size"))? as usize;
            let bytes = cur
                .take(size)
                .ok_or(layout_err(si, Some(xi), "sample size exceeds stream"))?;
            samples.push(Sample {
                handle,
                data: bytes.to_vec(),
            });
        }
        stamps.push(NotificationStamp { timestamp, samples });
    }
    if cur.remaining() != 0 {
        return Err(layout_err(count, None, "trailing bytes after last stamp"));
    }
    Ok(NotificationStream { stamps })
}

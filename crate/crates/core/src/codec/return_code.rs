use std::fmt;

/// An ADS return code as carried in the AMS header error field or a
/// response's `result` field. Zero is success.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdsCode(pub u32);

impl AdsCode {
    pub const NO_ERROR: AdsCode = AdsCode(0x000);
    pub const TARGET_PORT_NOT_FOUND: AdsCode = AdsCode(0x006);
    pub const UNKNOWN_COMMAND: AdsCode = AdsCode(0x008);
    pub const DEVICE_ERROR: AdsCode = AdsCode(0x700);
    pub const SERVICE_NOT_SUPPORTED: AdsCode = AdsCode(0x701);
    pub const INVALID_INDEX_GROUP: AdsCode = AdsCode(0x702);
    pub const INVALID_INDEX_OFFSET: AdsCode = AdsCode(0x703);
    pub const INVALID_ACCESS: AdsCode = AdsCode(0x704);
    pub const INVALID_SIZE: AdsCode = AdsCode(0x705);
    pub const INVALID_DATA: AdsCode = AdsCode(0x706);
    pub const NOT_READY: AdsCode = AdsCode(0x707);
    pub const SYMBOL_NOT_FOUND: AdsCode = AdsCode(0x710);
    pub const INVALID_STATE: AdsCode = AdsCode(0x712);
    pub const TRANSMODE_NOT_SUPPORTED: AdsCode = AdsCode(0x713);
    pub const INVALID_NOTIFICATION_HANDLE: AdsCode = AdsCode(0x714);
    pub const NOTIFICATION_CLIENT_NOT_REGISTERED: AdsCode = AdsCode(0x715);
    pub const NO_MORE_HANDLES: AdsCode = AdsCode(0x716);
    pub const CLIENT_TIMEOUT: AdsCode = AdsCode(0x745);

    pub fn is_ok(self) -> bool {
        self.0 == 0
    }

    pub fn description(self) -> &'static str {
        match self.0 {
            0x000 => "no error",
            0x006 => "target port not found",
            0x007 => "target machine not found",
            0x008 => "unknown command ID",
            0x700 => "general device error",
            0x701 => "service not supported by server",
            0x702 => "invalid index group",
            0x703 => "invalid index offset",
            0x704 => "reading/writing not permitted",
            0x705 => "parameter size not correct",
            0x706 => "invalid parameter value(s)",
            0x707 => "device not in a ready state",
            0x708 => "device busy",
            0x70C => "not found",
            0x710 => "symbol not found",
            0x711 => "symbol version invalid",
            0x712 => "server is in an invalid state",
            0x713 => "AdsTransMode not supported",
            0x714 => "notification handle is invalid",
            0x715 => "notification client not registered",
            0x716 => "no more notification handles",
            0x717 => "notification size too large",
            0x745 => "timeout elapsed",
            _ => "unknown ADS error",
        }
    }
}

impl fmt::Display for AdsCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x} ({})", self.0, self.description())
    }
}

impl From<u32> for AdsCode {
    fn from(v: u32) -> Self {
        AdsCode(v)
    }
}

//! ADS over AMS/TCP: a wire codec, a client with handle caching and device
//! notifications, and a simulated cyclic PLC to talk to.

pub mod client;
pub mod codec;
pub mod sim;
pub mod time;
pub mod types;

pub use codec::{AdsCode, AmsAddress, AmsNetId, NotificationAttrib};
pub use types::{PlcType, Scalar, ScalarType, TypedValue};

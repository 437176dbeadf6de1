//! Timestamps in ADS form: 100 ns ticks since 1601-01-01 UTC.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// 1970-01-01 expressed in 100 ns ticks since 1601-01-01.
pub const UNIX_EPOCH_TICKS: u64 = 116_444_736_000_000_000;

/// Start of logical time for virtual-clock runs (2024-01-01T00:00:00Z).
pub const VIRTUAL_EPOCH_TICKS: u64 = 133_485_408_000_000_000;

pub fn now_ticks() -> u64 {
    let since = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or(Duration::ZERO);
    UNIX_EPOCH_TICKS + to_ticks(since)
}

/// Whole 100 ns ticks in `d`, truncating.
pub fn to_ticks(d: Duration) -> u64 {
    (d.as_nanos() / 100) as u64
}

pub fn from_ticks(ticks: u64) -> Duration {
    Duration::from_nanos(ticks.saturating_mul(100))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs() {
        // 2024-01-01 is 1_704_067_200 s after the Unix epoch.
        assert_eq!(VIRTUAL_EPOCH_TICKS, UNIX_EPOCH_TICKS + 1_704_067_200 * 10_000_000);
        assert_eq!(to_ticks(Duration::from_micros(100)), 1000);
        assert_eq!(from_ticks(1000), Duration::from_micros(100));
        assert!(now_ticks() > VIRTUAL_EPOCH_TICKS);
    }
}

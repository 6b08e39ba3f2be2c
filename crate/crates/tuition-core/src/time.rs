//! Injected logical time.
//!
//! Timestamps are milliseconds since the Unix epoch (UTC, no zone); the wire
//! and report format is the 14-digit `YYYYMMDDHHMMSS` form, so conversions
//! truncate to whole seconds. No code in this crate ever reads a real clock:
//! timestamps arrive as message fields, command arguments, or simulator
//! state, which is what makes every run replayable.

use alloc::format;
use alloc::string::String;
use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use core::fmt;

pub const MILLIS_PER_SECOND: i64 = 1_000;
pub const MILLIS_PER_DAY: i64 = 86_400 * MILLIS_PER_SECOND;

/// A logical instant, millisecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

/// The input was not a valid `YYYYMMDDHHMMSS` instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidTimestamp(pub String);

impl fmt::Display for InvalidTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid timestamp {:?} (want YYYYMMDDHHMMSS)", self.0)
    }
}

impl core::error::Error for InvalidTimestamp {}

impl Timestamp {
    pub const fn from_millis(millis: i64) -> Timestamp {
        Timestamp(millis)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub fn from_ymd_hms(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: u32,
    ) -> Option<Timestamp> {
        let date = NaiveDate::from_ymd_opt(year, month, day)?;
        let dt = date.and_hms_opt(hour, minute, second)?;
        Some(Timestamp(dt.and_utc().timestamp_millis()))
    }

    /// Parse the 14-digit wire form.
    pub fn parse_wire(s: &str) -> Result<Timestamp, InvalidTimestamp> {
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(InvalidTimestamp(String::from(s)));
        }
        let dt = NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S")
            .map_err(|_| InvalidTimestamp(String::from(s)))?;
        Ok(Timestamp(dt.and_utc().timestamp_millis()))
    }

    /// Render the 14-digit wire form, truncating sub-second precision.
    pub fn wire(self) -> String {
        let dt = self.naive();
        format!(
            "{:04}{:02}{:02}{:02}{:02}{:02}",
            dt.year(),
            dt.month(),
            dt.day(),
            dt.hour(),
            dt.minute(),
            dt.second()
        )
    }

    pub fn add_millis(self, millis: i64) -> Timestamp {
        Timestamp(self.0.saturating_add(millis))
    }

    pub fn add_days(self, days: i64) -> Timestamp {
        self.add_millis(days.saturating_mul(MILLIS_PER_DAY))
    }

    fn naive(self) -> NaiveDateTime {
        DateTime::from_timestamp_millis(self.0)
            .expect("timestamp out of chrono range")
            .naive_utc()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.wire())
    }
}

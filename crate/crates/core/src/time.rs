//! Simulation time base: integer microseconds since simulation start.

use std::fmt;
use std::ops::Sub;

use thiserror::Error;

/// Largest representable simulation instant (2^62 µs, roughly 146 000 years).
pub const MAX_MICROS: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("simulation time overflow: {0} µs + {1} µs exceeds 2^62")]
pub struct TimeOverflow(pub u64, pub u64);

/// Microseconds since simulation start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> SimTime {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> SimTime {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> SimTime {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Adds `d`, failing when the result would leave the `[0, 2^62]` range.
    pub fn checked_add(self, d: SimTime) -> Result<SimTime, TimeOverflow> {
        match self.0.checked_add(d.0) {
            Some(v) if v <= MAX_MICROS => Ok(SimTime(v)),
            _ => Err(TimeOverflow(self.0, d.0)),
        }
    }

    /// Adds `d`, clamping at the 2^62 cap.
    pub fn saturating_add(self, d: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(d.0).min(MAX_MICROS))
    }

    pub fn saturating_sub(self, d: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(d.0))
    }

    /// Seconds and leftover microseconds, as stored in pcap record headers.
    pub fn split_secs(self) -> (u64, u32) {
        (self.0 / 1_000_000, (self.0 % 1_000_000) as u32)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

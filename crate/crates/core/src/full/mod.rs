//! Reference TCP peer with a sliding window and RFC 1122 delayed ACKs.
//!
//! This is a behavioral model rather than an extracted OS stack. It has no
//! congestion control, Nagle, SACK, timestamps or window scaling.

mod conn;
mod stack;

use thiserror::Error;

use crate::time::SimTime;

pub use conn::{FullConnStats, FullConnection};
pub use stack::{FullHandle, FullStack, FullStats, UdpDelivery};

/// Upper bound on the delayed-ACK timer allowed by RFC 1122.
pub const MAX_DELAYED_ACK: SimTime = SimTime::from_micros(500_000);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid full TCP configuration: {0}")]
pub struct FullConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullTcpConfig {
    pub recv_window: u16,
    pub delayed_ack_timeout: SimTime,
    /// Acknowledge at the latest after this many full-sized segments.
    pub ack_every_n: u32,
    pub initial_rto: SimTime,
    pub max_rto: SimTime,
    /// MSS announced in our SYN.
    pub mss: u16,
    pub max_retransmissions: u32,
    pub time_wait: SimTime,
    /// Out-of-order segments kept for later reassembly.
    pub reorder_capacity: usize,
}

impl Default for FullTcpConfig {
    fn default() -> Self {
        FullTcpConfig {
            recv_window: 65535,
            delayed_ack_timeout: SimTime::from_millis(200),
            ack_every_n: 2,
            initial_rto: SimTime::from_secs(1),
            max_rto: SimTime::from_secs(60),
            mss: 1460,
            max_retransmissions: 12,
            time_wait: SimTime::from_secs(1),
            reorder_capacity: 64,
        }
    }
}

impl FullTcpConfig {
    pub fn validate(&self) -> Result<(), FullConfigError> {
        if self.delayed_ack_timeout > MAX_DELAYED_ACK {
            return Err(FullConfigError(format!(
                "delayed_ack_timeout {} exceeds the 500ms bound",
                self.delayed_ack_timeout
            )));
        }
        if self.ack_every_n == 0 {
            return Err(FullConfigError("ack_every_n must be at least 1".into()));
        }
        if self.recv_window == 0 {
            return Err(FullConfigError("recv_window must be positive".into()));
        }
        if self.mss == 0 {
            return Err(FullConfigError("mss must be positive".into()));
        }
        if self.initial_rto == SimTime::ZERO || self.initial_rto > self.max_rto {
            return Err(FullConfigError("initial_rto must be positive and at most max_rto".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

//! Model of uIP's constrained IPv4/TCP/UDP stack.
//!
//! The model keeps uIP's defining restrictions: a single packet buffer shared
//! by input and output, at most one unacknowledged TCP segment per connection
//! (two halves with the split option), retransmission driven by a periodic
//! timer, and an event-callback application interface without a
//! retransmission buffer.

mod app;
mod config;
mod stack;

use thiserror::Error;

use crate::tcp::TcpState;

pub use app::{AppContext, AppEvent, AppFlags, ConnHandle, ConnInfo, NullApp, SendCache, UdpContext, UdpHandle, UipApp};
pub use config::{ConfigError, UipConfig, HEADER_OVERHEAD, MAX_RTO_PERIODS, MIN_BUFFER_SIZE};
pub use stack::{ConnStats, PacketBuffer, ProcessCause, UipConnection, UipStack, UipStats};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UipError {
    #[error("connection table full")]
    ConnectionTableFull,
    #[error("listener table full")]
    ListenerTableFull,
    #[error("UDP connection table full")]
    UdpTableFull,
    #[error("send while a segment is still in flight")]
    SendWhileInflight,
    #[error("retransmission must resupply {expected} bytes, got {got}")]
    RexmitMismatch { expected: usize, got: usize },
    #[error("connection not established (state {0})")]
    NotConnected(TcpState),
    #[error("unknown connection handle {0}")]
    UnknownConnection(usize),
    #[error("payload of {len} bytes does not fit the {max}-byte budget")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("TCP disabled in configuration")]
    TcpDisabled,
    #[error("UDP disabled in configuration")]
    UdpDisabled,
}

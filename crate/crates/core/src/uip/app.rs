//! Event-callback application interface of the constrained stack.

use std::fmt;
use std::net::Ipv4Addr;

use super::{ConnStats, UipError};
use crate::tcp::TcpState;

#[derive(Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct AppFlags(pub u8);

impl AppFlags {
    pub const CONNECTED: AppFlags = AppFlags(0x01);
    pub const NEWDATA: AppFlags = AppFlags(0x02);
    pub const ACKED: AppFlags = AppFlags(0x04);
    pub const REXMIT: AppFlags = AppFlags(0x08);
    pub const POLL: AppFlags = AppFlags(0x10);
    pub const CLOSED: AppFlags = AppFlags(0x20);
    pub const ABORTED: AppFlags = AppFlags(0x40);
    pub const TIMEDOUT: AppFlags = AppFlags(0x80);

    pub fn contains(self, other: AppFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn intersects(self, other: AppFlags) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::ops::BitOr for AppFlags {
    type Output = AppFlags;
    fn bitor(self, rhs: AppFlags) -> AppFlags {
        AppFlags(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for AppFlags {
    fn bitor_assign(&mut self, rhs: AppFlags) {
        self.0 |= rhs.0;
    }
}

impl fmt::Debug for AppFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (Self::CONNECTED, "connected"),
            (Self::NEWDATA, "newdata"),
            (Self::ACKED, "acked"),
            (Self::REXMIT, "rexmit"),
            (Self::POLL, "poll"),
            (Self::CLOSED, "closed"),
            (Self::ABORTED, "aborted"),
            (Self::TIMEDOUT, "timedout"),
        ];
        let set: Vec<&str> = names.iter().filter(|(fl, _)| self.contains(*fl)).map(|(_, n)| *n).collect();
        write!(f, "{{{}}}", set.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppEvent {
    pub flags: AppFlags,
    /// Received payload when `flags` contains `NEWDATA`.
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnHandle(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UdpHandle(pub usize);

/// Read-only view of the connection an event is about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnInfo {
    pub handle: ConnHandle,
    pub state: TcpState,
    pub local_port: u16,
    pub remote_addr: Ipv4Addr,
    pub remote_port: u16,
    pub mss: usize,
    pub inflight_len: usize,
    pub stats: ConnStats,
}

/// What the application asked for during one callback.
#[derive(Debug, Default)]
pub(crate) struct AppRequests {
    pub send: Option<Vec<u8>>,
    pub close: bool,
    pub abort: bool,
}

pub struct AppContext<'a> {
    pub(crate) event: &'a AppEvent,
    pub(crate) info: ConnInfo,
    pub(crate) req: AppRequests,
}

impl<'a> AppContext<'a> {
    pub fn flags(&self) -> AppFlags {
        self.event.flags
    }

    pub fn data(&self) -> &[u8] {
        &self.event.data
    }

    pub fn conn(&self) -> &ConnInfo {
        &self.info
    }

    pub fn handle(&self) -> ConnHandle {
        self.info.handle
    }

    pub fn mss(&self) -> usize {
        self.info.mss
    }

    /// Hands payload to the stack; returns how many bytes were taken.
    ///
    /// At most one segment (`mss` bytes) is accepted and only when nothing is
    /// in flight. During a `REXMIT` callback the application must resupply the
    /// in-flight bytes exactly.
    pub fn send(&mut self, data: &[u8]) -> Result<usize, UipError> {
        let rexmit = self.event.flags.contains(AppFlags::REXMIT);
        if self.req.send.is_some() {
            return Err(UipError::SendWhileInflight);
        }
        if rexmit {
            if data.len() != self.info.inflight_len {
                return Err(UipError::RexmitMismatch { expected: self.info.inflight_len, got: data.len() });
            }
        } else {
            if self.info.state != TcpState::Established {
                return Err(UipError::NotConnected(self.info.state));
            }
            if self.info.inflight_len > 0 {
                return Err(UipError::SendWhileInflight);
            }
        }
        let n = data.len().min(self.info.mss);
        if n == 0 {
            return Ok(0);
        }
        self.req.send = Some(data[..n].to_vec());
        Ok(n)
    }

    pub fn close(&mut self) {
        self.req.close = true;
    }

    pub fn abort(&mut self) {
        self.req.abort = true;
    }
}

pub struct UdpContext<'a> {
    pub(crate) handle: UdpHandle,
    pub(crate) src: Ipv4Addr,
    pub(crate) src_port: u16,
    pub(crate) data: &'a [u8],
}

impl<'a> UdpContext<'a> {
    pub fn handle(&self) -> UdpHandle {
        self.handle
    }

    pub fn source(&self) -> (Ipv4Addr, u16) {
        (self.src, self.src_port)
    }

    pub fn data(&self) -> &[u8] {
        self.data
    }
}

/// The single application callback of an instance (`UIP_APPCALL`).
pub trait UipApp {
    fn appcall(&mut self, ctx: &mut AppContext<'_>);

    fn udp_appcall(&mut self, _ctx: &mut UdpContext<'_>) {}
}

/// An application that ignores every event.
#[derive(Debug, Default, Clone)]
pub struct NullApp;

impl UipApp for NullApp {
    fn appcall(&mut self, _ctx: &mut AppContext<'_>) {}
}

/// Remembers the last segment an application sent so a `REXMIT` callback can
/// hand back the identical bytes.
#[derive(Debug, Default, Clone)]
pub struct SendCache {
    last: Vec<u8>,
}

impl SendCache {
    /// Sends `data` and remembers the accepted prefix.
    pub fn send(&mut self, ctx: &mut AppContext<'_>, data: &[u8]) -> Result<usize, UipError> {
        let n = ctx.send(data)?;
        self.last = data[..n].to_vec();
        Ok(n)
    }

    /// Resupplies the remembered segment during a `REXMIT` callback.
    pub fn resend(&self, ctx: &mut AppContext<'_>) -> Result<usize, UipError> {
        ctx.send(&self.last)
    }

    pub fn last(&self) -> &[u8] {
        &self.last
    }

    pub fn clear(&mut self) {
        self.last.clear();
    }
}

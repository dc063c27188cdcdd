//! Scenario applications running on uIP instances.

use std::collections::BTreeMap;

use nsc_core::tcp::TcpState;
use nsc_core::uip::{AppContext, AppFlags, ConnHandle, ConnStats, SendCache, UdpContext, UdpHandle, UipApp};
use nsc_core::SimTime;

/// Byte `i` of every bulk transfer; sinks check delivered data against it.
pub fn pattern_byte(i: u64) -> u8 {
    (i % 251) as u8
}

pub fn pattern(offset: u64, len: usize) -> Vec<u8> {
    (offset..offset + len as u64).map(pattern_byte).collect()
}

#[derive(Debug, Default, Clone)]
pub struct BulkState {
    pub total: u64,
    pub sent: u64,
    pub handle: Option<ConnHandle>,
    pub done_at: Option<SimTime>,
    pub close_requested: bool,
    /// Connection counters captured when the connection went away.
    pub final_stats: Option<ConnStats>,
    pub(crate) cache: SendCache,
}

#[derive(Debug, Clone)]
pub struct SinkState {
    pub bytes: u64,
    /// False once any delivered byte differs from the expected pattern.
    pub intact: bool,
    offsets: BTreeMap<usize, u64>,
}

impl Default for SinkState {
    fn default() -> Self {
        SinkState { bytes: 0, intact: true, offsets: BTreeMap::new() }
    }
}

impl SinkState {
    /// Accounts for `data` received on connection `conn`.
    pub fn absorb(&mut self, conn: usize, data: &[u8]) {
        let off = self.offsets.entry(conn).or_insert(0);
        if data.iter().enumerate().any(|(i, &b)| b != pattern_byte(*off + i as u64)) {
            self.intact = false;
        }
        *off += data.len() as u64;
        self.bytes += data.len() as u64;
    }

    pub fn absorb_datagram(&mut self, data: &[u8]) {
        self.bytes += data.len() as u64;
    }
}

#[derive(Debug, Default, Clone)]
pub struct EchoState {
    pub bytes: u64,
    pending: BTreeMap<usize, (Vec<u8>, SendCache)>,
}

#[derive(Debug, Default, Clone)]
pub struct BlastState {
    pub sent: u64,
    pub datagrams: u64,
    pub handle: Option<UdpHandle>,
}

#[derive(Debug, Clone)]
pub enum AppState {
    Bulk(BulkState),
    Sink(SinkState),
    Echo(EchoState),
    Blast(BlastState),
}

#[derive(Debug, Clone)]
pub struct Slot {
    /// Index of the app in the scenario.
    pub app: usize,
    pub port: u16,
    pub state: AppState,
}

/// Dispatches the single uIP callback to the scenario apps of one node.
#[derive(Debug, Default, Clone)]
pub struct NodeApp {
    pub now: SimTime,
    pub slots: Vec<Slot>,
    by_conn: BTreeMap<usize, usize>,
    by_udp: BTreeMap<usize, usize>,
}

impl NodeApp {
    pub fn bind_conn(&mut self, h: ConnHandle, slot: usize) {
        self.by_conn.insert(h.0, slot);
    }

    pub fn bind_udp(&mut self, h: UdpHandle, slot: usize) {
        self.by_udp.insert(h.0, slot);
    }

    pub fn slot_of_app(&self, app: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.app == app)
    }

    fn listener(&self, port: u16) -> Option<usize> {
        self.slots.iter().position(|s| s.port == port && matches!(s.state, AppState::Sink(_) | AppState::Echo(_)))
    }
}

fn bulk(b: &mut BulkState, ctx: &mut AppContext<'_>, now: SimTime) {
    let f = ctx.flags();
    if f.contains(AppFlags::ACKED) {
        b.cache.clear();
        if ctx.conn().stats.bytes_acked >= b.total && b.done_at.is_none() {
            b.done_at = Some(now);
        }
    }
    if f.contains(AppFlags::REXMIT) {
        // The cache holds exactly the in-flight bytes.
        let _ = b.cache.resend(ctx);
        return;
    }
    let info = ctx.conn();
    if info.state != TcpState::Established || info.inflight_len > 0 {
        return;
    }
    if info.stats.bytes_acked >= b.total {
        if !b.close_requested {
            b.close_requested = true;
            ctx.close();
        }
        return;
    }
    if b.sent < b.total {
        let n = (b.total - b.sent).min(ctx.mss() as u64) as usize;
        if let Ok(k) = b.cache.send(ctx, &pattern(b.sent, n)) {
            b.sent += k as u64;
        }
    }
}

fn echo(e: &mut EchoState, ctx: &mut AppContext<'_>) {
    let h = ctx.handle().0;
    let (pending, cache) = e.pending.entry(h).or_default();
    let f = ctx.flags();
    if f.contains(AppFlags::ACKED) {
        let n = cache.last().len().min(pending.len());
        pending.drain(..n);
        cache.clear();
    }
    if f.contains(AppFlags::REXMIT) {
        let _ = cache.resend(ctx);
        return;
    }
    if f.contains(AppFlags::NEWDATA) {
        e.bytes += ctx.data().len() as u64;
        pending.extend_from_slice(ctx.data());
    }
    let info = ctx.conn();
    if info.state == TcpState::Established && info.inflight_len == 0 && !pending.is_empty() {
        let data = pending.clone();
        let _ = cache.send(ctx, &data);
    }
}

impl UipApp for NodeApp {
    fn appcall(&mut self, ctx: &mut AppContext<'_>) {
        let h = ctx.handle().0;
        let f = ctx.flags();
        let slot = match self.by_conn.get(&h) {
            Some(&s) => s,
            None if f.contains(AppFlags::CONNECTED) => match self.listener(ctx.conn().local_port) {
                Some(s) => {
                    self.by_conn.insert(h, s);
                    s
                }
                None => return,
            },
            None => return,
        };
        let gone = f.intersects(AppFlags::CLOSED | AppFlags::ABORTED | AppFlags::TIMEDOUT);
        let now = self.now;
        match &mut self.slots[slot].state {
            AppState::Bulk(b) => {
                if gone {
                    b.final_stats = Some(ctx.conn().stats.clone());
                } else {
                    bulk(b, ctx, now);
                }
            }
            AppState::Sink(s) => {
                if f.contains(AppFlags::NEWDATA) {
                    s.absorb(h, ctx.data());
                }
                if gone {
                    s.offsets.remove(&h);
                }
            }
            AppState::Echo(e) => {
                if gone {
                    e.pending.remove(&h);
                } else {
                    echo(e, ctx);
                }
            }
            AppState::Blast(_) => {}
        }
        if gone {
            self.by_conn.remove(&h);
        }
    }

    fn udp_appcall(&mut self, ctx: &mut UdpContext<'_>) {
        if let Some(&slot) = self.by_udp.get(&ctx.handle().0) {
            if let AppState::Sink(s) = &mut self.slots[slot].state {
                s.absorb_datagram(ctx.data());
            }
        }
    }
}

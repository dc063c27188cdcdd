use std::net::Ipv4Addr;

use super::app::{AppContext, AppEvent, AppFlags, AppRequests, ConnHandle, ConnInfo, UdpContext, UdpHandle, UipApp};
use super::config::{UipConfig, MAX_RTO_PERIODS};
use super::UipError;
use crate::rng::Rng;
use crate::tcp::TcpState;
use crate::time::SimTime;
use crate::wire::{self, Packet, TcpFlags, TcpSegment, Transport, DEFAULT_TTL, IPV4_HEADER_LEN, UDP_HEADER_LEN};

/// The one buffer an instance owns. Incoming packets are copied in, processed
/// in place, and any reply overwrites them before being handed to the driver.
#[derive(Debug, Clone)]
pub struct PacketBuffer {
    data: Vec<u8>,
    len: usize,
}

impl PacketBuffer {
    fn new(size: usize) -> PacketBuffer {
        PacketBuffer { data: vec![0; size], len: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data[..self.len]
    }

    fn load(&mut self, bytes: &[u8]) -> bool {
        if bytes.len() > self.data.len() {
            return false;
        }
        self.data[..bytes.len()].copy_from_slice(bytes);
        self.len = bytes.len();
        true
    }

    fn clear(&mut self) {
        self.len = 0;
    }
}

/// Data-segment accounting for one connection. For every connection
/// `segments_sent == segments_acked + retransmissions + outstanding + dropped`
/// where `outstanding` is the number of segments currently in flight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConnStats {
    pub segments_sent: u64,
    pub segments_acked: u64,
    pub retransmissions: u64,
    pub ctl_retransmissions: u64,
    pub dropped: u64,
    pub bytes_acked: u64,
    pub outstanding: u64,
    pub timed_out: bool,
}

#[derive(Debug, Clone, Default)]
pub struct UipConnection {
    pub local_port: u16,
    pub remote_port: u16,
    pub remote_addr: Option<Ipv4Addr>,
    pub state: TcpState,
    /// First unacknowledged sequence number (uIP's `snd_nxt`).
    pub snd_una: u32,
    pub rcv_nxt: u32,
    /// Unacknowledged payload bytes: zero or one segment.
    pub inflight_len: usize,
    /// SYN or FIN sent and not yet acknowledged.
    pub ctl_outstanding: bool,
    /// Connect requested, initial SYN not yet emitted.
    syn_pending: bool,
    /// Current retransmission timeout, in periodic intervals.
    pub rto_periods: u16,
    /// Countdown to retransmission (or up-count in TIME_WAIT).
    pub timer: u16,
    pub nrtx: u8,
    pub mss: usize,
    inflight_segments: u64,
    pub stats: ConnStats,
}

impl UipConnection {
    fn snd_nxt(&self) -> u32 {
        self.snd_una
            .wrapping_add(self.inflight_len as u32)
            .wrapping_add(self.ctl_outstanding as u32)
    }

    fn outstanding(&self) -> bool {
        self.inflight_len > 0 || self.ctl_outstanding || self.syn_pending
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UipStats {
    pub rx_packets: u64,
    pub tx_packets: u64,
    pub checksum_drops: u64,
    pub malformed_drops: u64,
    pub oversize_drops: u64,
    pub misrouted_drops: u64,
    pub no_connection_drops: u64,
    pub rst_sent: u64,
}

#[derive(Debug, Clone, Copy)]
struct UdpConn {
    local_port: u16,
    remote_addr: Ipv4Addr,
    remote_port: u16,
}

/// What triggers a processing pass, mirroring `uip_process(flag)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessCause {
    /// The packet buffer holds a received packet.
    Input,
    /// Periodic timer for the current connection.
    Timer,
    /// Poll request for the current connection.
    Poll,
}

/// Environment functions the stack would otherwise take from the OS.
#[derive(Debug, Clone)]
struct Stubs {
    clock: SimTime,
    rng: Rng,
    log: Vec<String>,
}

pub struct UipStack<A> {
    config: UipConfig,
    addr: Ipv4Addr,
    buf: PacketBuffer,
    conns: Vec<UipConnection>,
    /// The current connection (`uip_conn`).
    current: Option<usize>,
    listeners: Vec<u16>,
    udp: Vec<Option<UdpConn>>,
    last_port: u16,
    ip_ident: u16,
    stubs: Stubs,
    stats: UipStats,
    app: A,
}

type Out = Vec<Vec<u8>>;

impl<A: UipApp> UipStack<A> {
    /// Builds an instance with all tables zeroed. `seed` feeds the stub
    /// random function (initial sequence numbers).
    pub fn new(config: UipConfig, addr: Ipv4Addr, app: A, seed: u64) -> UipStack<A> {
        UipStack {
            buf: PacketBuffer::new(config.buffer_size),
            conns: vec![UipConnection::default(); config.max_connections],
            current: None,
            listeners: Vec::new(),
            udp: vec![None; config.udp_connections],
            last_port: 1024,
            ip_ident: 0,
            stubs: Stubs { clock: SimTime::ZERO, rng: Rng::new(seed), log: Vec::new() },
            stats: UipStats::default(),
            app,
            addr,
            config,
        }
    }

    pub fn config(&self) -> &UipConfig {
        &self.config
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn app(&self) -> &A {
        &self.app
    }

    pub fn app_mut(&mut self) -> &mut A {
        &mut self.app
    }

    pub fn stats(&self) -> &UipStats {
        &self.stats
    }

    pub fn packet_buffer(&self) -> &PacketBuffer {
        &self.buf
    }

    pub fn connection(&self, h: ConnHandle) -> Option<&UipConnection> {
        self.conns.get(h.0)
    }

    pub fn connections(&self) -> impl Iterator<Item = (ConnHandle, &UipConnection)> {
        self.conns.iter().enumerate().map(|(i, c)| (ConnHandle(i), c))
    }

    pub fn open_connections(&self) -> usize {
        self.conns.iter().filter(|c| c.state != TcpState::Closed).count()
    }

    pub fn listening_ports(&self) -> &[u16] {
        &self.listeners
    }

    /// Index of the connection being processed, if any (`uip_conn`).
    pub fn current_connection(&self) -> Option<ConnHandle> {
        self.current.map(ConnHandle)
    }

    /// Diagnostics written through the log stub.
    pub fn log(&self) -> &[String] {
        &self.stubs.log
    }

    pub fn clock(&self) -> SimTime {
        self.stubs.clock
    }

    /// Advances the clock stub. Callers guarantee monotonicity.
    pub fn set_clock(&mut self, now: SimTime) {
        self.stubs.clock = now;
    }

    fn log_line(&mut self, msg: String) {
        let line = format!("[{}] {}", self.stubs.clock, msg);
        self.stubs.log.push(line);
    }

    // ---- application API -------------------------------------------------

    pub fn tcp_listen(&mut self, port: u16) -> Result<(), UipError> {
        if !self.config.tcp_enabled {
            return Err(UipError::TcpDisabled);
        }
        if self.listeners.contains(&port) {
            return Ok(());
        }
        if self.listeners.len() >= self.config.max_listen_ports {
            return Err(UipError::ListenerTableFull);
        }
        self.listeners.push(port);
        Ok(())
    }

    pub fn tcp_unlisten(&mut self, port: u16) {
        self.listeners.retain(|&p| p != port);
    }

    /// Allocates a connection in SYN_SENT. The SYN goes out on the next
    /// processing pass for the connection (poll or periodic timer).
    pub fn tcp_connect(&mut self, addr: Ipv4Addr, port: u16) -> Result<ConnHandle, UipError> {
        if !self.config.tcp_enabled {
            return Err(UipError::TcpDisabled);
        }
        let slot = self
            .conns
            .iter()
            .position(|c| c.state == TcpState::Closed)
            .ok_or(UipError::ConnectionTableFull)?;
        let local_port = self.next_port();
        let iss = self.stubs.rng.next_u32();
        self.conns[slot] = UipConnection {
            local_port,
            remote_port: port,
            remote_addr: Some(addr),
            state: TcpState::SynSent,
            snd_una: iss,
            rcv_nxt: 0,
            inflight_len: 0,
            ctl_outstanding: true,
            syn_pending: true,
            rto_periods: self.config.initial_rto,
            timer: self.config.initial_rto,
            nrtx: 0,
            mss: self.config.mss(),
            inflight_segments: 0,
            stats: ConnStats::default(),
        };
        Ok(ConnHandle(slot))
    }

    pub fn udp_new(&mut self, addr: Ipv4Addr, port: u16) -> Result<UdpHandle, UipError> {
        if !self.config.udp_enabled {
            return Err(UipError::UdpDisabled);
        }
        let slot = self.udp.iter().position(|u| u.is_none()).ok_or(UipError::UdpTableFull)?;
        let local_port = self.next_port();
        self.udp[slot] = Some(UdpConn { local_port, remote_addr: addr, remote_port: port });
        Ok(UdpHandle(slot))
    }

    /// Binds a UDP endpoint to a fixed local port.
    pub fn udp_bind(&mut self, h: UdpHandle, port: u16) {
        if let Some(Some(u)) = self.udp.get_mut(h.0) {
            u.local_port = port;
        }
    }

    pub fn udp_remove(&mut self, h: UdpHandle) {
        if let Some(u) = self.udp.get_mut(h.0) {
            *u = None;
        }
    }

    /// Sends one datagram on `h`; returns the emitted packet.
    pub fn udp_send(&mut self, h: UdpHandle, data: &[u8]) -> Result<Out, UipError> {
        let u = self.udp.get(h.0).copied().flatten().ok_or(UipError::UnknownConnection(h.0))?;
        let max = self.config.buffer_size - IPV4_HEADER_LEN - UDP_HEADER_LEN;
        if data.len() > max {
            return Err(UipError::PayloadTooLarge { len: data.len(), max });
        }
        let ident = self.next_ident();
        let bytes = wire::encode_udp(
            self.addr,
            u.remote_addr,
            DEFAULT_TTL,
            ident,
            u.local_port,
            u.remote_port,
            data,
            self.config.udp_checksums,
        );
        let mut out = Vec::new();
        self.emit(bytes, &mut out);
        Ok(out)
    }

    fn next_port(&mut self) -> u16 {
        loop {
            self.last_port = if self.last_port >= 32000 { 4096 } else { self.last_port + 1 };
            let p = self.last_port;
            let used = self.conns.iter().any(|c| c.state != TcpState::Closed && c.local_port == p)
                || self.udp.iter().flatten().any(|u| u.local_port == p);
            if !used {
                return p;
            }
        }
    }

    fn next_ident(&mut self) -> u16 {
        self.ip_ident = self.ip_ident.wrapping_add(1);
        self.ip_ident
    }

    // ---- driver entry points ---------------------------------------------

    /// Copies a received packet into the packet buffer and processes it.
    pub fn input(&mut self, packet: &[u8]) -> Out {
        self.stats.rx_packets += 1;
        if !self.buf.load(packet) {
            self.stats.oversize_drops += 1;
            return Vec::new();
        }
        self.uip_process(ProcessCause::Input)
    }

    /// Runs the periodic timer over every connection. Each connection's pass
    /// may emit at most one packet (two halves with the split option).
    pub fn periodic(&mut self) -> Out {
        let mut out = Vec::new();
        for i in 0..self.conns.len() {
            if self.conns[i].state == TcpState::Closed {
                continue;
            }
            self.current = Some(i);
            out.extend(self.uip_process(ProcessCause::Timer));
        }
        self.current = None;
        out
    }

    /// Poll request for one connection: sends a pending SYN or lets the
    /// application send on an idle established connection.
    pub fn poll(&mut self, h: ConnHandle) -> Out {
        if h.0 >= self.conns.len() || self.conns[h.0].state == TcpState::Closed {
            return Vec::new();
        }
        self.current = Some(h.0);
        let out = self.uip_process(ProcessCause::Poll);
        self.current = None;
        out
    }

    /// One processing pass. Output, if any, is left in the packet buffer and
    /// also returned (at most one packet, or two halves of a split segment).
    pub fn uip_process(&mut self, cause: ProcessCause) -> Out {
        let mut out = Vec::new();
        match cause {
            ProcessCause::Input => self.process_input(&mut out),
            ProcessCause::Timer => {
                if let Some(i) = self.current {
                    self.process_timer(i, &mut out);
                }
            }
            ProcessCause::Poll => {
                if let Some(i) = self.current {
                    self.process_poll(i, &mut out);
                }
            }
        }
        if out.is_empty() {
            self.buf.clear();
        }
        out
    }

    fn process_input(&mut self, out: &mut Out) {
        let pkt = match wire::parse(self.buf.as_slice()) {
            Ok(p) => p,
            Err(e) => {
                if e.is_checksum() {
                    self.stats.checksum_drops += 1;
                } else {
                    self.stats.malformed_drops += 1;
                }
                return;
            }
        };
        if pkt.dst != self.addr {
            self.stats.misrouted_drops += 1;
            return;
        }
        match &pkt.transport {
            Transport::Tcp(seg) if self.config.tcp_enabled => self.tcp_input(&pkt, seg, out),
            Transport::Udp(dgram) if self.config.udp_enabled => {
                let found = self.udp.iter().position(|u| {
                    u.is_some_and(|u| {
                        u.local_port == dgram.dst_port
                            && (u.remote_port == 0 || u.remote_port == dgram.src_port)
                            && (u.remote_addr.is_unspecified() || u.remote_addr == pkt.src)
                    })
                });
                match found {
                    Some(slot) => {
                        let mut ctx = UdpContext {
                            handle: UdpHandle(slot),
                            src: pkt.src,
                            src_port: dgram.src_port,
                            data: &dgram.payload,
                        };
                        self.app.udp_appcall(&mut ctx);
                    }
                    None => self.stats.no_connection_drops += 1,
                }
            }
            _ => self.stats.malformed_drops += 1,
        }
    }

    fn find_conn(&self, src: Ipv4Addr, seg: &TcpSegment) -> Option<usize> {
        self.conns.iter().position(|c| {
            c.state != TcpState::Closed
                && c.local_port == seg.dst_port
                && c.remote_port == seg.src_port
                && c.remote_addr == Some(src)
        })
    }

    fn tcp_input(&mut self, pkt: &Packet, seg: &TcpSegment, out: &mut Out) {
        let Some(i) = self.find_conn(pkt.src, seg) else {
            self.tcp_input_unmatched(pkt, seg, out);
            return;
        };
        self.current = Some(i);
        self.tcp_input_conn(i, seg, out);
        self.current = None;
    }

    fn tcp_input_unmatched(&mut self, pkt: &Packet, seg: &TcpSegment, out: &mut Out) {
        if seg.flags.contains(TcpFlags::RST) {
            self.stats.no_connection_drops += 1;
            return;
        }
        let is_syn = seg.flags.contains(TcpFlags::SYN) && !seg.flags.contains(TcpFlags::ACK);
        if is_syn && self.listeners.contains(&seg.dst_port) {
            // Free slot, else recycle the oldest TIME_WAIT connection.
            let slot = self.conns.iter().position(|c| c.state == TcpState::Closed).or_else(|| {
                self.conns
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.state == TcpState::TimeWait)
                    .max_by_key(|(_, c)| c.timer)
                    .map(|(i, _)| i)
            });
            let Some(slot) = slot else {
                self.stats.no_connection_drops += 1;
                return;
            };
            let iss = self.stubs.rng.next_u32();
            let mss = seg.mss.map_or(self.config.mss(), |m| (m as usize).min(self.config.mss()));
            self.conns[slot] = UipConnection {
                local_port: seg.dst_port,
                remote_port: seg.src_port,
                remote_addr: Some(pkt.src),
                state: TcpState::SynRcvd,
                snd_una: iss,
                rcv_nxt: seg.seq.wrapping_add(1),
                inflight_len: 0,
                ctl_outstanding: true,
                syn_pending: false,
                rto_periods: self.config.initial_rto,
                timer: self.config.initial_rto,
                nrtx: 0,
                mss: mss.max(1),
                inflight_segments: 0,
                stats: ConnStats::default(),
            };
            self.current = Some(slot);
            self.send_ctl(slot, TcpFlags::SYN | TcpFlags::ACK, out);
            self.current = None;
            return;
        }
        // Segment for a closed port: reset.
        self.stats.no_connection_drops += 1;
        let (seq, ack, flags) = if seg.flags.contains(TcpFlags::ACK) {
            (seg.ack, 0, TcpFlags::RST)
        } else {
            (0, seg.seq.wrapping_add(seg.seq_len()), TcpFlags::RST | TcpFlags::ACK)
        };
        let rst = TcpSegment {
            src_port: seg.dst_port,
            dst_port: seg.src_port,
            seq,
            ack,
            flags,
            window: 0,
            mss: None,
            payload: Vec::new(),
        };
        let ident = self.next_ident();
        let bytes = wire::encode_tcp(self.addr, pkt.src, DEFAULT_TTL, ident, &rst);
        self.stats.rst_sent += 1;
        self.emit(bytes, out);
    }

    fn tcp_input_conn(&mut self, i: usize, seg: &TcpSegment, out: &mut Out) {
        if seg.flags.contains(TcpFlags::RST) {
            self.drop_outstanding(i);
            self.conns[i].state = TcpState::Closed;
            self.call_app(i, AppFlags::ABORTED, Vec::new());
            return;
        }
        let state = self.conns[i].state;
        let syn = seg.flags.contains(TcpFlags::SYN);
        let len = seg.payload.len();

        if state == TcpState::SynRcvd && syn && !seg.flags.contains(TcpFlags::ACK) {
            // Retransmitted SYN: repeat our SYN+ACK.
            self.send_ctl(i, TcpFlags::SYN | TcpFlags::ACK, out);
            return;
        }
        let handshake = state == TcpState::SynSent && syn && seg.flags.contains(TcpFlags::ACK);
        if !handshake
            && (len > 0 || syn || seg.flags.contains(TcpFlags::FIN))
            && seg.seq != self.conns[i].rcv_nxt
        {
            // Out of order or duplicate: acknowledge what we have.
            self.send_ctl(i, TcpFlags::ACK, out);
            return;
        }

        let mut flags = AppFlags::default();
        {
            let c = &mut self.conns[i];
            if seg.flags.contains(TcpFlags::ACK) && (c.inflight_len > 0 || c.ctl_outstanding) && !c.syn_pending {
                let expected = c.snd_nxt();
                if seg.ack == expected {
                    if c.inflight_len > 0 {
                        c.stats.segments_acked += c.inflight_segments;
                        c.stats.bytes_acked += c.inflight_len as u64;
                        c.stats.outstanding = 0;
                        flags |= AppFlags::ACKED;
                    }
                    c.snd_una = expected;
                    c.inflight_len = 0;
                    c.inflight_segments = 0;
                    c.ctl_outstanding = false;
                    c.nrtx = 0;
                    c.rto_periods = self.config.initial_rto;
                    c.timer = c.rto_periods;
                }
            }
        }
        let ctl_acked = !self.conns[i].ctl_outstanding && !self.conns[i].syn_pending;

        match state {
            TcpState::SynRcvd => {
                if ctl_acked {
                    self.conns[i].state = TcpState::Established;
                    flags |= AppFlags::CONNECTED;
                    let mut data = Vec::new();
                    if len > 0 {
                        flags |= AppFlags::NEWDATA;
                        let c = &mut self.conns[i];
                        c.rcv_nxt = c.rcv_nxt.wrapping_add(len as u32);
                        data = seg.payload.clone();
                    }
                    self.app_send(i, flags, data, len > 0, out);
                }
            }
            TcpState::SynSent => {
                if handshake && ctl_acked {
                    let c = &mut self.conns[i];
                    if let Some(m) = seg.mss {
                        c.mss = (m as usize).min(self.config.mss()).max(1);
                    }
                    c.rcv_nxt = seg.seq.wrapping_add(1);
                    c.state = TcpState::Established;
                    self.app_send(i, AppFlags::CONNECTED, Vec::new(), true, out);
                } else if seg.flags.contains(TcpFlags::ACK) {
                    // Unacceptable ACK in SYN_SENT: reset and give up.
                    self.send_ctl(i, TcpFlags::RST | TcpFlags::ACK, out);
                    self.stats.rst_sent += 1;
                    self.conns[i].state = TcpState::Closed;
                    self.call_app(i, AppFlags::ABORTED, Vec::new());
                }
            }
            TcpState::Established => {
                let fin = seg.flags.contains(TcpFlags::FIN);
                let outstanding = self.conns[i].inflight_len > 0 || self.conns[i].ctl_outstanding;
                if fin && !outstanding {
                    let c = &mut self.conns[i];
                    c.rcv_nxt = c.rcv_nxt.wrapping_add(len as u32 + 1);
                    let mut f = flags | AppFlags::CLOSED;
                    if len > 0 {
                        f |= AppFlags::NEWDATA;
                    }
                    self.call_app(i, f, seg.payload.clone());
                    let c = &mut self.conns[i];
                    c.state = TcpState::LastAck;
                    c.ctl_outstanding = true;
                    c.nrtx = 0;
                    c.rto_periods = self.config.initial_rto;
                    c.timer = c.rto_periods;
                    self.send_ctl(i, TcpFlags::FIN | TcpFlags::ACK, out);
                    return;
                }
                let mut data = Vec::new();
                if len > 0 {
                    flags |= AppFlags::NEWDATA;
                    let c = &mut self.conns[i];
                    c.rcv_nxt = c.rcv_nxt.wrapping_add(len as u32);
                    data = seg.payload.clone();
                }
                if !flags.is_empty() {
                    self.app_send(i, flags, data, len > 0, out);
                }
            }
            TcpState::LastAck => {
                if ctl_acked {
                    self.conns[i].state = TcpState::Closed;
                    self.call_app(i, AppFlags::CLOSED, Vec::new());
                }
            }
            TcpState::FinWait1 | TcpState::FinWait2 => {
                if len > 0 {
                    let c = &mut self.conns[i];
                    c.rcv_nxt = c.rcv_nxt.wrapping_add(len as u32);
                    self.call_app(i, AppFlags::NEWDATA, seg.payload.clone());
                }
                if seg.flags.contains(TcpFlags::FIN) {
                    let c = &mut self.conns[i];
                    c.rcv_nxt = c.rcv_nxt.wrapping_add(1);
                    c.state = if state == TcpState::FinWait2 || ctl_acked { TcpState::TimeWait } else { TcpState::Closing };
                    c.timer = 0;
                    self.call_app(i, AppFlags::CLOSED, Vec::new());
                    self.send_ctl(i, TcpFlags::ACK, out);
                } else {
                    if state == TcpState::FinWait1 && ctl_acked {
                        let c = &mut self.conns[i];
                        c.state = TcpState::FinWait2;
                        c.timer = 0;
                    }
                    if len > 0 {
                        self.send_ctl(i, TcpFlags::ACK, out);
                    }
                }
            }
            TcpState::TimeWait => self.send_ctl(i, TcpFlags::ACK, out),
            TcpState::Closing => {
                if ctl_acked {
                    let c = &mut self.conns[i];
                    c.state = TcpState::TimeWait;
                    c.timer = 0;
                }
            }
            TcpState::Closed | TcpState::Listen | TcpState::CloseWait => {}
        }
    }

    fn process_timer(&mut self, i: usize, out: &mut Out) {
        let state = self.conns[i].state;
        match state {
            TcpState::Closed => return,
            TcpState::TimeWait | TcpState::FinWait2 => {
                let c = &mut self.conns[i];
                c.timer += 1;
                if c.timer >= self.config.time_wait_periods {
                    c.state = TcpState::Closed;
                }
                return;
            }
            _ => {}
        }
        if self.conns[i].syn_pending {
            self.send_initial_syn(i, out);
            return;
        }
        if self.conns[i].outstanding() {
            let c = &mut self.conns[i];
            c.timer = c.timer.saturating_sub(1);
            if c.timer > 0 {
                return;
            }
            if c.nrtx >= self.config.max_retransmissions {
                self.drop_outstanding(i);
                let c = &mut self.conns[i];
                c.stats.timed_out = true;
                // The RST carries the sequence number the peer expects next.
                c.inflight_len = 0;
                c.ctl_outstanding = false;
                self.send_ctl(i, TcpFlags::RST | TcpFlags::ACK, out);
                self.stats.rst_sent += 1;
                self.conns[i].state = TcpState::Closed;
                self.call_app(i, AppFlags::TIMEDOUT, Vec::new());
                return;
            }
            c.nrtx += 1;
            c.rto_periods = (c.rto_periods * 2).min(MAX_RTO_PERIODS);
            c.timer = c.rto_periods;
            match state {
                TcpState::SynRcvd => {
                    self.conns[i].stats.ctl_retransmissions += 1;
                    self.send_ctl(i, TcpFlags::SYN | TcpFlags::ACK, out);
                }
                TcpState::SynSent => {
                    self.conns[i].stats.ctl_retransmissions += 1;
                    self.send_ctl(i, TcpFlags::SYN, out);
                }
                TcpState::Established => {
                    if self.conns[i].inflight_len > 0 {
                        self.rexmit(i, out);
                    }
                }
                TcpState::FinWait1 | TcpState::Closing | TcpState::LastAck => {
                    self.conns[i].stats.ctl_retransmissions += 1;
                    self.send_ctl(i, TcpFlags::FIN | TcpFlags::ACK, out);
                }
                _ => {}
            }
        } else if state == TcpState::Established {
            self.app_send(i, AppFlags::POLL, Vec::new(), false, out);
        }
    }

    fn process_poll(&mut self, i: usize, out: &mut Out) {
        if self.conns[i].syn_pending {
            self.send_initial_syn(i, out);
        } else if self.conns[i].state == TcpState::Established && !self.conns[i].outstanding() {
            self.app_send(i, AppFlags::POLL, Vec::new(), false, out);
        }
    }

    fn send_initial_syn(&mut self, i: usize, out: &mut Out) {
        let c = &mut self.conns[i];
        c.syn_pending = false;
        c.timer = c.rto_periods;
        self.send_ctl(i, TcpFlags::SYN, out);
    }

    fn rexmit(&mut self, i: usize, out: &mut Out) {
        let expected = self.conns[i].inflight_len;
        let segs = self.conns[i].inflight_segments;
        let req = self.call_app(i, AppFlags::REXMIT, Vec::new());
        match req.send {
            Some(data) if data.len() == expected => {
                let c = &mut self.conns[i];
                c.stats.retransmissions += segs;
                c.stats.segments_sent += segs;
                self.emit_data(i, &data, out);
            }
            _ => {
                self.log_line(format!("conn {i}: application did not resupply {expected} bytes on rexmit"));
            }
        }
    }

    /// Calls the application and acts on its requests: abort, close, send,
    /// or a bare ACK when received data needs acknowledging.
    fn app_send(&mut self, i: usize, flags: AppFlags, data: Vec<u8>, ack_needed: bool, out: &mut Out) {
        let req = self.call_app(i, flags, data);
        if req.abort {
            self.drop_outstanding(i);
            self.send_ctl(i, TcpFlags::RST | TcpFlags::ACK, out);
            self.stats.rst_sent += 1;
            self.conns[i].state = TcpState::Closed;
            return;
        }
        if req.close && self.conns[i].inflight_len == 0 {
            let c = &mut self.conns[i];
            c.state = TcpState::FinWait1;
            c.ctl_outstanding = true;
            c.nrtx = 0;
            c.rto_periods = self.config.initial_rto;
            c.timer = c.rto_periods;
            self.send_ctl(i, TcpFlags::FIN | TcpFlags::ACK, out);
            return;
        }
        if let Some(data) = req.send {
            let split = self.config.tcp_split && data.len() == self.conns[i].mss && data.len() >= 2;
            let segs = if split { 2 } else { 1 };
            let c = &mut self.conns[i];
            c.inflight_len = data.len();
            c.inflight_segments = segs;
            c.nrtx = 0;
            c.timer = c.rto_periods;
            c.stats.segments_sent += segs;
            c.stats.outstanding = segs;
            self.emit_data(i, &data, out);
            return;
        }
        if ack_needed {
            self.send_ctl(i, TcpFlags::ACK, out);
        }
    }

    fn call_app(&mut self, i: usize, flags: AppFlags, data: Vec<u8>) -> AppRequests {
        let event = AppEvent { flags, data };
        let info = self.conn_info(i);
        let mut ctx = AppContext { event: &event, info, req: AppRequests::default() };
        self.app.appcall(&mut ctx);
        ctx.req
    }

    fn conn_info(&self, i: usize) -> ConnInfo {
        let c = &self.conns[i];
        ConnInfo {
            handle: ConnHandle(i),
            state: c.state,
            local_port: c.local_port,
            remote_addr: c.remote_addr.unwrap_or(Ipv4Addr::UNSPECIFIED),
            remote_port: c.remote_port,
            mss: c.mss,
            inflight_len: c.inflight_len,
            stats: c.stats,
        }
    }

    fn drop_outstanding(&mut self, i: usize) {
        let c = &mut self.conns[i];
        if c.inflight_len > 0 {
            c.stats.dropped += c.inflight_segments;
            c.stats.outstanding = 0;
            c.inflight_len = 0;
            c.inflight_segments = 0;
        }
    }

    /// Data segment(s) for the in-flight payload; split in two halves when
    /// the split option is on and the segment is exactly full.
    fn emit_data(&mut self, i: usize, data: &[u8], out: &mut Out) {
        let c = &self.conns[i];
        let split = self.config.tcp_split && data.len() == c.mss && data.len() >= 2;
        let seq = c.snd_una;
        if split {
            let first = data.len().div_ceil(2);
            self.emit_segment(i, seq, TcpFlags::ACK | TcpFlags::PSH, &data[..first], out);
            self.emit_segment(i, seq.wrapping_add(first as u32), TcpFlags::ACK | TcpFlags::PSH, &data[first..], out);
        } else {
            self.emit_segment(i, seq, TcpFlags::ACK | TcpFlags::PSH, data, out);
        }
    }

    /// Control segment without payload. SYNs carry the MSS option and the
    /// initial sequence number; everything else uses the next send sequence.
    fn send_ctl(&mut self, i: usize, flags: TcpFlags, out: &mut Out) {
        let c = &self.conns[i];
        let seq = if flags.contains(TcpFlags::SYN) || flags.contains(TcpFlags::FIN) { c.snd_una } else { c.snd_nxt() };
        self.emit_segment(i, seq, flags, &[], out);
    }

    fn emit_segment(&mut self, i: usize, seq: u32, flags: TcpFlags, payload: &[u8], out: &mut Out) {
        let c = &self.conns[i];
        let Some(dst) = c.remote_addr else { return };
        let seg = TcpSegment {
            src_port: c.local_port,
            dst_port: c.remote_port,
            seq,
            ack: if flags.contains(TcpFlags::ACK) { c.rcv_nxt } else { 0 },
            flags,
            window: if flags.contains(TcpFlags::RST) { 0 } else { self.config.receive_window() },
            mss: flags.contains(TcpFlags::SYN).then_some(self.config.mss() as u16),
            payload: payload.to_vec(),
        };
        let ident = self.next_ident();
        let bytes = wire::encode_tcp(self.addr, dst, DEFAULT_TTL, ident, &seg);
        self.emit(bytes, out);
    }

    /// Writes an outgoing packet into the packet buffer and hands a copy to
    /// the output path.
    fn emit(&mut self, bytes: Vec<u8>, out: &mut Out) {
        debug_assert!(out.len() < 2, "one processing pass emits at most two packets");
        if !self.buf.load(&bytes) {
            self.log_line(format!("output of {} bytes exceeds packet buffer", bytes.len()));
            return;
        }
        self.stats.tx_packets += 1;
        out.push(self.buf.as_slice().to_vec());
    }
}

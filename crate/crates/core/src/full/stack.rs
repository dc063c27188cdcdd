use std::net::Ipv4Addr;

use super::{FullConnection, FullTcpConfig};
use crate::rng::Rng;
use crate::tcp::TcpState;
use crate::time::SimTime;
use crate::wire::{self, TcpFlags, TcpSegment, Transport, DEFAULT_TTL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FullHandle(pub usize);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FullStats {
    pub rx_packets: u64,
    pub tx_packets: u64,
    pub checksum_drops: u64,
    pub malformed_drops: u64,
    pub misrouted_drops: u64,
    pub no_connection_drops: u64,
    pub rst_sent: u64,
    pub udp_received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpDelivery {
    pub src: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub payload: Vec<u8>,
}

/// A host running the reference TCP. Connections are never reused, so a
/// handle stays valid for the lifetime of the stack.
pub struct FullStack {
    config: FullTcpConfig,
    addr: Ipv4Addr,
    conns: Vec<FullConnection>,
    listeners: Vec<u16>,
    udp_ports: Vec<u16>,
    accepted: Vec<FullHandle>,
    udp_inbox: Vec<UdpDelivery>,
    rng: Rng,
    ip_ident: u16,
    last_port: u16,
    stats: FullStats,
}

impl FullStack {
    pub fn new(config: FullTcpConfig, addr: Ipv4Addr, seed: u64) -> FullStack {
        FullStack {
            config,
            addr,
            conns: Vec::new(),
            listeners: Vec::new(),
            udp_ports: Vec::new(),
            accepted: Vec::new(),
            udp_inbox: Vec::new(),
            rng: Rng::new(seed),
            ip_ident: 0,
            last_port: 49151,
            stats: FullStats::default(),
        }
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn config(&self) -> &FullTcpConfig {
        &self.config
    }

    pub fn stats(&self) -> &FullStats {
        &self.stats
    }

    pub fn connection(&self, h: FullHandle) -> Option<&FullConnection> {
        self.conns.get(h.0)
    }

    pub fn connection_mut(&mut self, h: FullHandle) -> Option<&mut FullConnection> {
        self.conns.get_mut(h.0)
    }

    pub fn connections(&self) -> impl Iterator<Item = (FullHandle, &FullConnection)> {
        self.conns.iter().enumerate().map(|(i, c)| (FullHandle(i), c))
    }

    pub fn listen(&mut self, port: u16) {
        if !self.listeners.contains(&port) {
            self.listeners.push(port);
        }
    }

    pub fn udp_bind(&mut self, port: u16) {
        if !self.udp_ports.contains(&port) {
            self.udp_ports.push(port);
        }
    }

    /// Connections opened passively since the last call.
    pub fn take_accepted(&mut self) -> Vec<FullHandle> {
        std::mem::take(&mut self.accepted)
    }

    pub fn take_udp(&mut self) -> Vec<UdpDelivery> {
        std::mem::take(&mut self.udp_inbox)
    }

    pub fn take_received(&mut self, h: FullHandle) -> Vec<u8> {
        self.conns.get_mut(h.0).map(|c| c.take_received()).unwrap_or_default()
    }

    fn next_port(&mut self) -> u16 {
        self.last_port = if self.last_port == u16::MAX { 49152 } else { self.last_port + 1 };
        self.last_port
    }

    fn wrap(&mut self, dst: Ipv4Addr, segs: Vec<TcpSegment>) -> Vec<Vec<u8>> {
        segs.iter()
            .map(|s| {
                self.ip_ident = self.ip_ident.wrapping_add(1);
                self.stats.tx_packets += 1;
                if s.flags.contains(TcpFlags::RST) {
                    self.stats.rst_sent += 1;
                }
                wire::encode_tcp(self.addr, dst, DEFAULT_TTL, self.ip_ident, s)
            })
            .collect()
    }

    pub fn connect(&mut self, addr: Ipv4Addr, port: u16, now: SimTime) -> (FullHandle, Vec<Vec<u8>>) {
        let local = self.next_port();
        let iss = self.rng.next_u32();
        let (conn, syn) = FullConnection::connect(&self.config, local, addr, port, iss, now);
        self.conns.push(conn);
        (FullHandle(self.conns.len() - 1), self.wrap(addr, vec![syn]))
    }

    pub fn send(&mut self, h: FullHandle, data: &[u8], now: SimTime) -> Vec<Vec<u8>> {
        let Some(c) = self.conns.get_mut(h.0) else {
            return Vec::new();
        };
        let dst = c.remote_addr;
        let segs = c.send(data, now);
        self.wrap(dst, segs)
    }

    pub fn close(&mut self, h: FullHandle, now: SimTime) -> Vec<Vec<u8>> {
        let Some(c) = self.conns.get_mut(h.0) else {
            return Vec::new();
        };
        let dst = c.remote_addr;
        let segs = c.close(now);
        self.wrap(dst, segs)
    }

    pub fn udp_send(&mut self, src_port: u16, dst: Ipv4Addr, dst_port: u16, payload: &[u8]) -> Vec<u8> {
        self.ip_ident = self.ip_ident.wrapping_add(1);
        self.stats.tx_packets += 1;
        wire::encode_udp(self.addr, dst, DEFAULT_TTL, self.ip_ident, src_port, dst_port, payload, true)
    }

    /// Earliest pending timer over all connections.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.conns.iter().filter_map(|c| c.next_deadline()).min()
    }

    /// Runs every timer that is due at `now`.
    pub fn on_timer(&mut self, now: SimTime) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for i in 0..self.conns.len() {
            if self.conns[i].next_deadline().is_some_and(|t| t <= now) {
                let dst = self.conns[i].remote_addr;
                let segs = self.conns[i].on_timer(now);
                out.extend(self.wrap(dst, segs));
            }
        }
        out
    }

    /// Processes a packet addressed to this host.
    pub fn input(&mut self, packet: &[u8], now: SimTime) -> Vec<Vec<u8>> {
        self.stats.rx_packets += 1;
        let p = match wire::parse(packet) {
            Ok(p) => p,
            Err(e) if e.is_checksum() => {
                self.stats.checksum_drops += 1;
                return Vec::new();
            }
            Err(_) => {
                self.stats.malformed_drops += 1;
                return Vec::new();
            }
        };
        if p.dst != self.addr {
            self.stats.misrouted_drops += 1;
            return Vec::new();
        }
        let seg = match p.transport {
            Transport::Udp(d) => {
                if self.udp_ports.contains(&d.dst_port) {
                    self.stats.udp_received += 1;
                    self.udp_inbox.push(UdpDelivery {
                        src: p.src,
                        src_port: d.src_port,
                        dst_port: d.dst_port,
                        payload: d.payload,
                    });
                } else {
                    self.stats.no_connection_drops += 1;
                }
                return Vec::new();
            }
            Transport::Tcp(seg) => seg,
        };

        let found = self.conns.iter().position(|c| {
            !c.is_closed() && c.local_port == seg.dst_port && c.remote_port == seg.src_port && c.remote_addr == p.src
        });
        if let Some(i) = found {
            let segs = self.conns[i].process_segment(&seg, now);
            return self.wrap(p.src, segs);
        }

        let syn_only = seg.flags.contains(TcpFlags::SYN) && !seg.flags.contains(TcpFlags::ACK);
        if syn_only && self.listeners.contains(&seg.dst_port) {
            let iss = self.rng.next_u32();
            let (conn, synack) = FullConnection::accept(&self.config, seg.dst_port, p.src, &seg, iss, now);
            self.conns.push(conn);
            self.accepted.push(FullHandle(self.conns.len() - 1));
            return self.wrap(p.src, vec![synack]);
        }

        self.stats.no_connection_drops += 1;
        if seg.flags.contains(TcpFlags::RST) {
            return Vec::new();
        }
        let rst = if seg.flags.contains(TcpFlags::ACK) {
            TcpSegment {
                src_port: seg.dst_port,
                dst_port: seg.src_port,
                seq: seg.ack,
                ack: 0,
                flags: TcpFlags::RST,
                window: 0,
                mss: None,
                payload: Vec::new(),
            }
        } else {
            TcpSegment {
                src_port: seg.dst_port,
                dst_port: seg.src_port,
                seq: 0,
                ack: seg.seq.wrapping_add(seg.seq_len()),
                flags: TcpFlags::RST | TcpFlags::ACK,
                window: 0,
                mss: None,
                payload: Vec::new(),
            }
        };
        self.wrap(p.src, vec![rst])
    }

    pub fn open_connections(&self) -> usize {
        self.conns.iter().filter(|c| c.state != TcpState::Closed).count()
    }
}

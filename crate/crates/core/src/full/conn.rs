use std::collections::VecDeque;
use std::net::Ipv4Addr;

use super::FullTcpConfig;
use crate::tcp::{seq_gt, seq_le, seq_lt, TcpState};
use crate::time::SimTime;
use crate::wire::{TcpFlags, TcpSegment};

/// MSS assumed when the peer's SYN carries no option.
const DEFAULT_PEER_MSS: usize = 536;

/// Data-segment accounting, same conservation rule as the constrained stack:
/// `segments_sent == segments_acked + retransmissions + outstanding + dropped`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FullConnStats {
    pub segments_sent: u64,
    pub segments_acked: u64,
    pub retransmissions: u64,
    pub ctl_retransmissions: u64,
    pub dropped: u64,
    pub bytes_acked: u64,
    pub outstanding: u64,
    pub timed_out: bool,
    pub acks_sent: u64,
    pub delayed_acks: u64,
    pub dup_acks_sent: u64,
    pub bytes_received: u64,
    pub invalid_segments: u64,
}

#[derive(Debug, Clone)]
struct Inflight {
    seq: u32,
    data: Vec<u8>,
    syn: bool,
    fin: bool,
}

impl Inflight {
    fn seq_len(&self) -> u32 {
        self.data.len() as u32 + self.syn as u32 + self.fin as u32
    }

    fn is_data(&self) -> bool {
        !self.data.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FullConnection {
    pub local_port: u16,
    pub remote_addr: Ipv4Addr,
    pub remote_port: u16,
    pub state: TcpState,
    pub iss: u32,
    pub snd_una: u32,
    pub snd_nxt: u32,
    pub rcv_nxt: u32,
    pub peer_window: u32,
    /// Send segment size: our MSS clamped by the peer's.
    pub mss: usize,
    pub pending_ack: bool,
    pub ack_deadline: Option<SimTime>,
    pub unacked_full_segments: u32,
    /// Receive-side estimate of the peer's segment size: the largest payload
    /// seen so far. Segments at least this large count as full-sized.
    pub rcv_mss: usize,
    pub rto: SimTime,
    pub rto_deadline: Option<SimTime>,
    pub nrtx: u32,
    pub aborted: bool,
    pub stats: FullConnStats,
    config: FullTcpConfig,
    reorder: Vec<(u32, Vec<u8>)>,
    unsent: VecDeque<u8>,
    inflight: VecDeque<Inflight>,
    close_requested: bool,
    fin_sent: bool,
    time_wait_deadline: Option<SimTime>,
    received: Vec<u8>,
}

impl FullConnection {
    fn blank(config: &FullTcpConfig, local_port: u16, remote_addr: Ipv4Addr, remote_port: u16, iss: u32) -> Self {
        FullConnection {
            local_port,
            remote_addr,
            remote_port,
            state: TcpState::Closed,
            iss,
            snd_una: iss,
            snd_nxt: iss,
            rcv_nxt: 0,
            peer_window: 0,
            mss: config.mss as usize,
            pending_ack: false,
            ack_deadline: None,
            unacked_full_segments: 0,
            rcv_mss: 0,
            rto: config.initial_rto,
            rto_deadline: None,
            nrtx: 0,
            aborted: false,
            stats: FullConnStats::default(),
            config: config.clone(),
            reorder: Vec::new(),
            unsent: VecDeque::new(),
            inflight: VecDeque::new(),
            close_requested: false,
            fin_sent: false,
            time_wait_deadline: None,
            received: Vec::new(),
        }
    }

    /// Active open: returns the connection in SYN_SENT and its SYN.
    pub fn connect(
        config: &FullTcpConfig,
        local_port: u16,
        remote_addr: Ipv4Addr,
        remote_port: u16,
        iss: u32,
        now: SimTime,
    ) -> (FullConnection, TcpSegment) {
        let mut c = Self::blank(config, local_port, remote_addr, remote_port, iss);
        c.state = TcpState::SynSent;
        let syn = c.send_ctl(TcpFlags::SYN, now);
        (c, syn)
    }

    /// Passive open in response to `syn`: returns the connection in SYN_RCVD
    /// and its SYN+ACK.
    pub fn accept(
        config: &FullTcpConfig,
        local_port: u16,
        remote_addr: Ipv4Addr,
        syn: &TcpSegment,
        iss: u32,
        now: SimTime,
    ) -> (FullConnection, TcpSegment) {
        let mut c = Self::blank(config, local_port, remote_addr, syn.src_port, iss);
        c.state = TcpState::SynRcvd;
        c.rcv_nxt = syn.seq.wrapping_add(1);
        c.learn_peer(syn);
        let synack = c.send_ctl(TcpFlags::SYN | TcpFlags::ACK, now);
        (c, synack)
    }

    fn learn_peer(&mut self, syn: &TcpSegment) {
        let peer_mss = syn.mss.map(usize::from).unwrap_or(DEFAULT_PEER_MSS);
        self.mss = (self.config.mss as usize).min(peer_mss).max(1);
        self.peer_window = syn.window as u32;
    }

    pub fn is_closed(&self) -> bool {
        self.state == TcpState::Closed
    }

    /// Bytes delivered in order and not yet taken by the application.
    pub fn take_received(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.received)
    }

    pub fn unsent_len(&self) -> usize {
        self.unsent.len()
    }

    /// Unacknowledged data segments.
    pub fn outstanding_segments(&self) -> usize {
        self.inflight.iter().filter(|s| s.is_data()).count()
    }

    pub fn reorder_len(&self) -> usize {
        self.reorder.len()
    }

    /// Earliest instant at which `on_timer` has work to do.
    pub fn next_deadline(&self) -> Option<SimTime> {
        [
            if self.pending_ack { self.ack_deadline } else { None },
            self.rto_deadline,
            self.time_wait_deadline,
        ]
        .into_iter()
        .flatten()
        .min()
    }

    fn window(&self) -> u16 {
        self.config.recv_window
    }

    fn make(&mut self, flags: TcpFlags, seq: u32, payload: Vec<u8>) -> TcpSegment {
        let mut seg = TcpSegment {
            src_port: self.local_port,
            dst_port: self.remote_port,
            seq,
            ack: 0,
            flags,
            window: self.window(),
            mss: None,
            payload,
        };
        if flags.contains(TcpFlags::SYN) {
            seg.mss = Some(self.config.mss);
        }
        if flags.contains(TcpFlags::ACK) {
            seg.ack = self.rcv_nxt;
            self.pending_ack = false;
            self.ack_deadline = None;
            self.unacked_full_segments = 0;
            self.stats.acks_sent += 1;
        }
        seg
    }

    fn send_ctl(&mut self, flags: TcpFlags, now: SimTime) -> TcpSegment {
        let seq = self.snd_nxt;
        let entry = Inflight {
            seq,
            data: Vec::new(),
            syn: flags.contains(TcpFlags::SYN),
            fin: flags.contains(TcpFlags::FIN),
        };
        self.snd_nxt = self.snd_nxt.wrapping_add(entry.seq_len());
        self.inflight.push_back(entry);
        self.arm_rto(now);
        self.make(flags, seq, Vec::new())
    }

    fn arm_rto(&mut self, now: SimTime) {
        if self.rto_deadline.is_none() {
            self.rto_deadline = Some(now.saturating_add(self.rto));
        }
    }

    fn ack_now(&mut self) -> TcpSegment {
        let seq = self.snd_nxt;
        self.make(TcpFlags::ACK, seq, Vec::new())
    }

    fn rst(&mut self) -> TcpSegment {
        let seq = self.snd_nxt;
        let mut seg = self.make(TcpFlags::RST, seq, Vec::new());
        seg.window = 0;
        seg
    }

    fn abort(&mut self) {
        let dropped = self.outstanding_segments() as u64;
        self.stats.dropped += dropped;
        self.stats.outstanding = 0;
        self.inflight.clear();
        self.unsent.clear();
        self.reorder.clear();
        self.state = TcpState::Closed;
        self.aborted = true;
        self.pending_ack = false;
        self.ack_deadline = None;
        self.rto_deadline = None;
        self.time_wait_deadline = None;
    }

    fn enter_time_wait(&mut self, now: SimTime) {
        self.state = TcpState::TimeWait;
        self.rto_deadline = None;
        self.time_wait_deadline = Some(now.saturating_add(self.config.time_wait));
    }

    /// Queues application data and sends what the windows allow.
    pub fn send(&mut self, data: &[u8], now: SimTime) -> Vec<TcpSegment> {
        if self.close_requested || !matches!(self.state, TcpState::Established | TcpState::CloseWait) {
            return Vec::new();
        }
        self.unsent.extend(data.iter().copied());
        self.push(now)
    }

    /// Requests an orderly close once queued data has been sent.
    pub fn close(&mut self, now: SimTime) -> Vec<TcpSegment> {
        match self.state {
            TcpState::SynSent | TcpState::Listen => {
                self.abort();
                self.aborted = false;
                Vec::new()
            }
            TcpState::Established | TcpState::CloseWait | TcpState::SynRcvd => {
                self.close_requested = true;
                self.push(now)
            }
            _ => Vec::new(),
        }
    }

    /// Emits as many segments as the peer's window and our MSS allow, then
    /// the FIN if a close is pending and everything has been sent.
    fn push(&mut self, now: SimTime) -> Vec<TcpSegment> {
        let mut out = Vec::new();
        if !matches!(self.state, TcpState::Established | TcpState::CloseWait) {
            return out;
        }
        loop {
            let in_window = self.snd_nxt.wrapping_sub(self.snd_una);
            let avail = self.peer_window.saturating_sub(in_window) as usize;
            let n = self.mss.min(self.unsent.len()).min(avail);
            if n == 0 {
                break;
            }
            let data: Vec<u8> = self.unsent.drain(..n).collect();
            let seq = self.snd_nxt;
            self.snd_nxt = self.snd_nxt.wrapping_add(n as u32);
            self.inflight.push_back(Inflight { seq, data: data.clone(), syn: false, fin: false });
            self.stats.segments_sent += 1;
            self.stats.outstanding += 1;
            self.arm_rto(now);
            out.push(self.make(TcpFlags::ACK | TcpFlags::PSH, seq, data));
        }
        if self.close_requested && self.unsent.is_empty() && !self.fin_sent {
            self.fin_sent = true;
            self.state = match self.state {
                TcpState::CloseWait => TcpState::LastAck,
                _ => TcpState::FinWait1,
            };
            out.push(self.send_ctl(TcpFlags::FIN | TcpFlags::ACK, now));
        }
        out
    }

    fn process_ack(&mut self, ack: u32, now: SimTime) {
        if !(seq_gt(ack, self.snd_una) && seq_le(ack, self.snd_nxt)) {
            return;
        }
        self.snd_una = ack;
        while let Some(front) = self.inflight.front_mut() {
            let end = front.seq.wrapping_add(front.seq_len());
            if seq_le(end, ack) {
                let done = self.inflight.pop_front().expect("front exists");
                if done.is_data() {
                    self.stats.segments_acked += 1;
                    self.stats.outstanding -= 1;
                    self.stats.bytes_acked += done.data.len() as u64;
                }
                continue;
            }
            if seq_gt(ack, front.seq) {
                // Partial acknowledgment of a data segment: trim it in place.
                let cut = ack.wrapping_sub(front.seq) as usize;
                let cut = cut.min(front.data.len());
                front.data.drain(..cut);
                front.seq = ack;
                self.stats.bytes_acked += cut as u64;
            }
            break;
        }
        self.nrtx = 0;
        self.rto = self.config.initial_rto;
        self.rto_deadline = if self.inflight.is_empty() { None } else { Some(now.saturating_add(self.rto)) };
    }

    fn fin_acked(&self) -> bool {
        self.fin_sent && self.snd_una == self.snd_nxt
    }

    /// Processes one checksum-valid segment for this connection.
    pub fn process_segment(&mut self, seg: &TcpSegment, now: SimTime) -> Vec<TcpSegment> {
        let mut out = Vec::new();
        if seg.flags.contains(TcpFlags::RST) {
            let acceptable = match self.state {
                TcpState::SynSent => seg.flags.contains(TcpFlags::ACK) && seg.ack == self.snd_nxt,
                _ => seq_le(self.rcv_nxt, seg.seq)
                    && seq_lt(seg.seq, self.rcv_nxt.wrapping_add(self.window().max(1) as u32)),
            };
            if acceptable {
                self.abort();
            } else {
                self.stats.invalid_segments += 1;
            }
            return out;
        }

        match self.state {
            TcpState::Closed | TcpState::Listen => return out,
            TcpState::SynSent => {
                let want = TcpFlags::SYN | TcpFlags::ACK;
                if seg.flags.contains(want) && seg.ack == self.snd_nxt {
                    self.rcv_nxt = seg.seq.wrapping_add(1);
                    self.learn_peer(seg);
                    self.process_ack(seg.ack, now);
                    self.state = TcpState::Established;
                    out.push(self.ack_now());
                    out.extend(self.push(now));
                } else if seg.flags.contains(TcpFlags::ACK) {
                    self.stats.invalid_segments += 1;
                    let mut rst = self.make(TcpFlags::RST, seg.ack, Vec::new());
                    rst.window = 0;
                    out.push(rst);
                } else {
                    self.stats.invalid_segments += 1;
                }
                return out;
            }
            TcpState::SynRcvd => {
                if seg.flags.contains(TcpFlags::SYN) {
                    // Our SYN+ACK was lost: answer the retransmitted SYN.
                    if seg.seq.wrapping_add(1) == self.rcv_nxt {
                        let seq = self.iss;
                        out.push(self.make(TcpFlags::SYN | TcpFlags::ACK, seq, Vec::new()));
                    }
                    return out;
                }
                if !seg.flags.contains(TcpFlags::ACK) || seg.ack != self.iss.wrapping_add(1) {
                    self.stats.invalid_segments += 1;
                    return out;
                }
                self.process_ack(seg.ack, now);
                self.state = TcpState::Established;
            }
            _ => {}
        }

        if seg.flags.contains(TcpFlags::SYN) {
            // Duplicate SYN in a synchronized state: re-acknowledge.
            out.push(self.ack_now());
            return out;
        }
        if !seg.flags.contains(TcpFlags::ACK) {
            self.stats.invalid_segments += 1;
            return out;
        }

        self.process_ack(seg.ack, now);
        if seq_le(self.snd_una, seg.ack) {
            self.peer_window = seg.window as u32;
        }
        match self.state {
            TcpState::FinWait1 if self.fin_acked() => self.state = TcpState::FinWait2,
            TcpState::Closing if self.fin_acked() => self.enter_time_wait(now),
            TcpState::LastAck if self.fin_acked() => {
                self.state = TcpState::Closed;
                self.rto_deadline = None;
                return out;
            }
            _ => {}
        }

        let mut immediate = false;
        let receiving = matches!(self.state, TcpState::Established | TcpState::FinWait1 | TcpState::FinWait2);
        if receiving && !seg.payload.is_empty() {
            immediate |= self.receive_data(seg.seq, &seg.payload, now);
        }

        let fin_seq = seg.seq.wrapping_add(seg.payload.len() as u32);
        if seg.flags.contains(TcpFlags::FIN) && receiving && fin_seq == self.rcv_nxt {
            self.rcv_nxt = self.rcv_nxt.wrapping_add(1);
            immediate = true;
            match self.state {
                TcpState::Established => {
                    // The reference peer closes its half as soon as the peer
                    // has closed and it has nothing left to send.
                    self.state = TcpState::CloseWait;
                    self.close_requested = true;
                }
                TcpState::FinWait1 if self.fin_acked() => self.enter_time_wait(now),
                TcpState::FinWait1 => self.state = TcpState::Closing,
                TcpState::FinWait2 => self.enter_time_wait(now),
                _ => {}
            }
        } else if seg.flags.contains(TcpFlags::FIN) && self.state == TcpState::TimeWait {
            immediate = true;
        }

        let sent = self.push(now);
        let acked_by_data = !sent.is_empty();
        if immediate && !acked_by_data {
            out.push(self.ack_now());
        }
        out.extend(sent);
        out
    }

    /// Handles in-window payload. Returns true when an immediate ACK is due.
    fn receive_data(&mut self, seq: u32, payload: &[u8], now: SimTime) -> bool {
        let wnd_end = self.rcv_nxt.wrapping_add(self.window() as u32);
        let end = seq.wrapping_add(payload.len() as u32);
        if seq_le(end, self.rcv_nxt) {
            // Entirely old: the peer missed our ACK.
            self.stats.dup_acks_sent += 1;
            return true;
        }
        if seq_gt(seq, self.rcv_nxt) {
            if seq_lt(seq, wnd_end)
                && self.reorder.len() < self.config.reorder_capacity
                && !self.reorder.iter().any(|(s, _)| *s == seq)
            {
                let keep = (wnd_end.wrapping_sub(seq) as usize).min(payload.len());
                self.reorder.push((seq, payload[..keep].to_vec()));
            }
            self.stats.dup_acks_sent += 1;
            return true;
        }
        let skip = self.rcv_nxt.wrapping_sub(seq) as usize;
        let avail = self.window() as usize;
        let fresh = &payload[skip..payload.len().min(skip + avail)];
        let full_sized = payload.len() >= self.rcv_mss;
        if payload.len() > self.rcv_mss {
            self.rcv_mss = payload.len();
        }
        self.deliver(fresh);
        let filled_hole = self.drain_reorder();
        if skip > 0 || filled_hole || !self.reorder.is_empty() {
            return true;
        }
        if full_sized {
            self.unacked_full_segments += 1;
        }
        if self.unacked_full_segments >= self.config.ack_every_n {
            return true;
        }
        if !self.pending_ack {
            self.pending_ack = true;
            self.ack_deadline = Some(now.saturating_add(self.config.delayed_ack_timeout));
        }
        false
    }

    fn deliver(&mut self, bytes: &[u8]) {
        self.received.extend_from_slice(bytes);
        self.rcv_nxt = self.rcv_nxt.wrapping_add(bytes.len() as u32);
        self.stats.bytes_received += bytes.len() as u64;
    }

    fn drain_reorder(&mut self) -> bool {
        let mut any = false;
        loop {
            let rcv = self.rcv_nxt;
            let Some(i) = self.reorder.iter().position(|(s, d)| {
                seq_le(*s, rcv) && seq_gt(s.wrapping_add(d.len() as u32), rcv)
            }) else {
                break;
            };
            let (s, d) = self.reorder.swap_remove(i);
            let skip = rcv.wrapping_sub(s) as usize;
            self.deliver(&d[skip..]);
            any = true;
        }
        let rcv = self.rcv_nxt;
        self.reorder.retain(|(s, d)| seq_gt(s.wrapping_add(d.len() as u32), rcv));
        any
    }

    /// Fires whatever timers are due at `now`: delayed ACK, retransmission,
    /// TIME_WAIT expiry.
    pub fn on_timer(&mut self, now: SimTime) -> Vec<TcpSegment> {
        let mut out = Vec::new();
        if let Some(t) = self.time_wait_deadline {
            if t <= now {
                self.time_wait_deadline = None;
                self.state = TcpState::Closed;
                return out;
            }
        }
        if let Some(seg) = self.on_delayed_ack_timer(now) {
            out.push(seg);
        }
        if let Some(t) = self.rto_deadline {
            if t <= now {
                out.extend(self.retransmit(now));
            }
        }
        out
    }

    /// Sends the pending delayed ACK if its deadline has passed.
    pub fn on_delayed_ack_timer(&mut self, now: SimTime) -> Option<TcpSegment> {
        match self.ack_deadline {
            Some(t) if self.pending_ack && t <= now => {
                self.stats.delayed_acks += 1;
                Some(self.ack_now())
            }
            _ => None,
        }
    }

    fn retransmit(&mut self, now: SimTime) -> Vec<TcpSegment> {
        let Some(front) = self.inflight.front().cloned() else {
            self.rto_deadline = None;
            return Vec::new();
        };
        if self.nrtx >= self.config.max_retransmissions {
            let rst = self.rst();
            self.abort();
            self.stats.timed_out = true;
            return vec![rst];
        }
        self.nrtx += 1;
        self.rto = (self.rto.saturating_add(self.rto)).min(self.config.max_rto);
        self.rto_deadline = Some(now.saturating_add(self.rto));
        if front.is_data() {
            self.stats.segments_sent += 1;
            self.stats.retransmissions += 1;
        } else {
            self.stats.ctl_retransmissions += 1;
        }
        let mut flags = TcpFlags::empty();
        if front.syn {
            flags = flags | TcpFlags::SYN;
        }
        if front.fin {
            flags = flags | TcpFlags::FIN;
        }
        if self.state != TcpState::SynSent {
            flags = flags | TcpFlags::ACK;
        }
        if front.is_data() {
            flags = flags | TcpFlags::PSH;
        }
        vec![self.make(flags, front.seq, front.data)]
    }
}

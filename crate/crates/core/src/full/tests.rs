use std::net::Ipv4Addr;

use proptest::prelude::*;

use super::*;
use crate::tcp::TcpState;
use crate::time::SimTime;
use crate::wire::{self, TcpFlags, TcpSegment, Transport};

const PEER: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
const ME: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
const PEER_ISN: u32 = 1000;
const MY_ISN: u32 = 5000;

fn t(ms: u64) -> SimTime {
    SimTime::from_millis(ms)
}

fn seg(seq: u32, ack: u32, flags: TcpFlags, payload: &[u8], window: u16) -> TcpSegment {
    TcpSegment { src_port: 1025, dst_port: 80, seq, ack, flags, window, mss: None, payload: payload.to_vec() }
}

/// An established passive connection whose peer announced `peer_mss` and
/// `peer_window`.
fn established(peer_mss: u16, peer_window: u16) -> FullConnection {
    let mut syn = seg(PEER_ISN, 0, TcpFlags::SYN, &[], peer_window);
    syn.mss = Some(peer_mss);
    let (mut c, synack) = FullConnection::accept(&FullTcpConfig::default(), 80, PEER, &syn, MY_ISN, t(0));
    assert_eq!(synack.flags, TcpFlags::SYN | TcpFlags::ACK);
    assert_eq!((synack.seq, synack.ack, synack.mss), (MY_ISN, PEER_ISN + 1, Some(1460)));
    let out = c.process_segment(&seg(PEER_ISN + 1, MY_ISN + 1, TcpFlags::ACK, &[], peer_window), t(0));
    assert!(out.is_empty());
    assert_eq!(c.state, TcpState::Established);
    c
}

fn data(c: &FullConnection, offset: u32, len: usize) -> TcpSegment {
    seg(PEER_ISN + 1 + offset, c.snd_nxt, TcpFlags::ACK | TcpFlags::PSH, &vec![0xab; len], 360)
}

#[test]
fn one_full_segment_is_acked_after_timeout() {
    let mut c = established(360, 360);
    let s = data(&c, 0, 360);
    assert!(c.process_segment(&s, t(10)).is_empty());
    assert_eq!(c.ack_deadline, Some(t(210)));
    assert_eq!(c.next_deadline(), Some(t(210)));
    assert!(c.on_delayed_ack_timer(t(209)).is_none());
    let ack = c.on_delayed_ack_timer(t(210)).unwrap();
    assert_eq!((ack.flags, ack.ack), (TcpFlags::ACK, PEER_ISN + 1 + 360));
    assert!(!c.pending_ack);
}

#[test]
fn two_full_segments_are_acked_immediately() {
    let mut c = established(360, 360);
    let (a, b) = (data(&c, 0, 180), data(&c, 180, 180));
    assert!(c.process_segment(&a, t(10)).is_empty());
    let out = c.process_segment(&b, t(11));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].ack, PEER_ISN + 1 + 360);
    // Nothing left for the timer.
    assert!(c.on_delayed_ack_timer(t(500)).is_none());
}

#[test]
fn short_segment_after_full_ones_is_delayed() {
    let mut c = established(360, 360);
    c.process_segment(&data(&c, 0, 360), t(0));
    c.on_delayed_ack_timer(t(200)).unwrap();
    assert!(c.process_segment(&data(&c, 360, 100), t(300)).is_empty());
    assert_eq!(c.ack_deadline, Some(t(500)));
}

#[test]
fn out_of_order_gets_duplicate_ack_and_fill_is_acked() {
    let mut c = established(360, 360);
    let later = data(&c, 100, 50);
    let out = c.process_segment(&later, t(0));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].ack, PEER_ISN + 1);
    assert_eq!(c.reorder_len(), 1);
    let out = c.process_segment(&data(&c, 0, 100), t(1));
    assert_eq!(out[0].ack, PEER_ISN + 1 + 150);
    assert_eq!(c.take_received().len(), 150);
}

#[test]
fn old_duplicate_is_reacked() {
    let mut c = established(360, 360);
    let s = data(&c, 0, 360);
    c.process_segment(&s, t(0));
    c.on_delayed_ack_timer(t(200));
    let out = c.process_segment(&s, t(300));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].ack, PEER_ISN + 361);
    assert_eq!(c.take_received().len(), 360);
}

#[test]
fn timer_armed_twice_fires_once() {
    let mut c = established(360, 360);
    c.process_segment(&data(&c, 0, 10), t(0));
    c.process_segment(&data(&c, 10, 5), t(50));
    assert_eq!(c.ack_deadline, Some(t(200)));
    assert!(c.on_delayed_ack_timer(t(200)).is_some());
    assert!(c.on_delayed_ack_timer(t(250)).is_none());
}

#[test]
fn send_respects_small_peer_window() {
    let mut c = established(360, 360);
    let out = c.send(&[1; 1000], t(0));
    assert_eq!(out.iter().map(|s| s.payload.len()).collect::<Vec<_>>(), vec![360]);
    // The rest goes once the first segment is acknowledged.
    let out = c.process_segment(&seg(PEER_ISN + 1, MY_ISN + 361, TcpFlags::ACK, &[], 360), t(20));
    assert_eq!(out.iter().map(|s| s.payload.len()).collect::<Vec<_>>(), vec![360]);
}

#[test]
fn send_fills_large_window() {
    let mut c = established(360, 65535);
    let out = c.send(&[1; 1000], t(0));
    let lens: Vec<_> = out.iter().map(|s| s.payload.len()).collect();
    assert_eq!(lens, vec![360, 360, 280]);
    assert_eq!(out[1].seq, MY_ISN + 361);
    assert!(c.send(&[], t(0)).is_empty());
}

#[test]
fn retransmits_first_unacked_with_backoff() {
    let mut c = established(360, 65535);
    c.send(&[1; 500], t(0));
    assert_eq!(c.next_deadline(), Some(t(1000)));
    let out = c.on_timer(t(1000));
    assert_eq!(out.len(), 1);
    assert_eq!((out[0].seq, out[0].payload.len()), (MY_ISN + 1, 360));
    assert_eq!(c.next_deadline(), Some(t(3000)));
    c.process_segment(&seg(PEER_ISN + 1, MY_ISN + 501, TcpFlags::ACK, &[], 65535), t(3100));
    let s = c.stats;
    assert_eq!((s.segments_sent, s.segments_acked, s.retransmissions, s.outstanding), (3, 2, 1, 0));
    assert_eq!(s.bytes_acked, 500);
    assert_eq!(c.next_deadline(), None);
}

#[test]
fn closes_after_peer_fin() {
    let mut c = established(360, 360);
    let fin = seg(PEER_ISN + 1, MY_ISN + 1, TcpFlags::FIN | TcpFlags::ACK, &[], 360);
    let out = c.process_segment(&fin, t(0));
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].flags, TcpFlags::FIN | TcpFlags::ACK);
    assert_eq!(out[0].ack, PEER_ISN + 2);
    assert_eq!(c.state, TcpState::LastAck);
    c.process_segment(&seg(PEER_ISN + 2, MY_ISN + 2, TcpFlags::ACK, &[], 360), t(1));
    assert_eq!(c.state, TcpState::Closed);
}

#[test]
fn config_bound() {
    let cfg = FullTcpConfig { delayed_ack_timeout: SimTime::from_micros(500_001), ..FullTcpConfig::default() };
    assert!(cfg.validate().is_err());
    assert!(FullTcpConfig::default().validate().is_ok());
}

#[test]
fn stack_handshake_and_rst() {
    let mut s = FullStack::new(FullTcpConfig::default(), ME, 3);
    s.listen(80);
    let mut syn = seg(PEER_ISN, 0, TcpFlags::SYN, &[], 360);
    syn.mss = Some(360);
    let out = s.input(&wire::encode_tcp(PEER, ME, 64, 1, &syn), t(0));
    let p = wire::parse(&out[0]).unwrap();
    assert_eq!((p.src, p.dst), (ME, PEER));
    let Transport::Tcp(sa) = p.transport else { panic!() };
    assert_eq!(sa.flags, TcpFlags::SYN | TcpFlags::ACK);
    assert_eq!(s.take_accepted(), vec![FullHandle(0)]);

    let mut other = syn.clone();
    other.dst_port = 81;
    let out = s.input(&wire::encode_tcp(PEER, ME, 64, 2, &other), t(0));
    let Transport::Tcp(r) = wire::parse(&out[0]).unwrap().transport else { panic!() };
    assert_eq!((r.flags, r.ack), (TcpFlags::RST | TcpFlags::ACK, PEER_ISN + 1));
}

proptest! {
    /// Delayed-ACK bound and the every-second-segment rule for arbitrary
    /// arrival patterns of in-order segments.
    #[test]
    fn ack_bounds(gaps in proptest::collection::vec(0u64..400, 1..60), lens in proptest::collection::vec(1usize..=360, 60)) {
        let mut c = established(360, 360);
        let mut now = SimTime::ZERO;
        let mut offset = 0u32;
        let mut unacked_since: Option<SimTime> = None;
        let mut full_without_ack = 0;
        let mut largest = 0;
        for (gap, len) in gaps.iter().zip(lens.iter()) {
            let next = now.saturating_add(SimTime::from_millis(*gap));
            // Fire the delayed ACK if it falls before the next arrival.
            if let Some(d) = c.next_deadline() {
                if d <= next {
                    prop_assert!(c.on_delayed_ack_timer(d).is_some());
                    let since = unacked_since.take().unwrap();
                    prop_assert!(d <= since.saturating_add(SimTime::from_millis(200)));
                    full_without_ack = 0;
                }
            }
            now = next;
            let s = data(&c, offset, *len);
            offset += *len as u32;
            let full = *len >= largest;
            largest = largest.max(*len);
            let out = c.process_segment(&s, now);
            if unacked_since.is_none() {
                unacked_since = Some(now);
            }
            if full {
                full_without_ack += 1;
            }
            if !out.is_empty() {
                prop_assert_eq!(out.last().unwrap().ack, PEER_ISN + 1 + offset);
                unacked_since = None;
                full_without_ack = 0;
            }
            prop_assert!(full_without_ack < 2);
        }
    }
}

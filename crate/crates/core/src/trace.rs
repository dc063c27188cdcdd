//! Classic libpcap capture files and behavior-level trace comparison.
//!
//! Files are written little-endian with link type 101 (raw IPv4) and
//! simulation timestamps. The reader accepts either byte order.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use crate::time::SimTime;
use crate::wire::{self, TcpFlags, Transport};

pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
pub const LINKTYPE_RAW: u32 = 101;
pub const SNAPLEN: u32 = 65535;
pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("timestamp {now} precedes previous record at {prev}")]
    NonMonotonicTimestamp { prev: SimTime, now: SimTime },
    #[error("packet of {0} bytes exceeds the snapshot length")]
    PacketTooLarge(usize),
    #[error("not a pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("file shorter than the pcap global header")]
    TruncatedHeader,
    #[error("record {index} is truncated")]
    TruncatedRecord { index: usize },
    #[error("unsupported link type {0}")]
    UnsupportedLinktype(u32),
    #[error("record {index} is not a parseable IPv4 TCP/UDP packet: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("trace holds more than one conversation (record {index} starts another)")]
    MultipleFlows { index: usize },
    #[error("endpoint {0} does not appear in the trace")]
    EndpointNotInTrace(Ipv4Addr),
}

/// The 24-byte global header as written.
pub fn global_header() -> [u8; GLOBAL_HEADER_LEN] {
    let mut h = [0u8; GLOBAL_HEADER_LEN];
    h[0..4].copy_from_slice(&PCAP_MAGIC.to_le_bytes());
    h[4..6].copy_from_slice(&2u16.to_le_bytes());
    h[6..8].copy_from_slice(&4u16.to_le_bytes());
    // thiszone and sigfigs stay zero
    h[16..20].copy_from_slice(&SNAPLEN.to_le_bytes());
    h[20..24].copy_from_slice(&LINKTYPE_RAW.to_le_bytes());
    h
}

pub struct PcapWriter<W: Write> {
    out: W,
    last: SimTime,
    records: usize,
}

impl PcapWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let f = File::create(path)?;
        PcapWriter::new(BufWriter::new(f))
    }
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> Result<Self, TraceError> {
        out.write_all(&global_header())?;
        Ok(PcapWriter { out, last: SimTime::ZERO, records: 0 })
    }

    pub fn write(&mut self, time: SimTime, packet: &[u8]) -> Result<(), TraceError> {
        if time < self.last {
            return Err(TraceError::NonMonotonicTimestamp { prev: self.last, now: time });
        }
        if packet.len() > SNAPLEN as usize {
            return Err(TraceError::PacketTooLarge(packet.len()));
        }
        self.last = time;
        let (sec, usec) = time.split_secs();
        let len = packet.len() as u32;
        let mut rec = [0u8; RECORD_HEADER_LEN];
        rec[0..4].copy_from_slice(&(sec as u32).to_le_bytes());
        rec[4..8].copy_from_slice(&usec.to_le_bytes());
        rec[8..12].copy_from_slice(&len.to_le_bytes());
        rec[12..16].copy_from_slice(&len.to_le_bytes());
        self.out.write_all(&rec)?;
        self.out.write_all(packet)?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> usize {
        self.records
    }

    /// Flushes and returns the underlying sink.
    pub fn finish(mut self) -> Result<W, TraceError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Serializes a whole trace in memory.
pub fn to_bytes(records: &[(SimTime, Vec<u8>)]) -> Result<Vec<u8>, TraceError> {
    let mut w = PcapWriter::new(Vec::new())?;
    for (t, p) in records {
        w.write(*t, p)?;
    }
    w.finish()
}

pub fn write_file(path: impl AsRef<Path>, records: &[(SimTime, Vec<u8>)]) -> Result<(), TraceError> {
    let mut w = PcapWriter::create(path)?;
    for (t, p) in records {
        w.write(*t, p)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<(SimTime, Vec<u8>)>, TraceError> {
    let bytes = std::fs::read(path)?;
    parse(&bytes)
}

/// Parses a classic pcap image in either byte order.
pub fn parse(bytes: &[u8]) -> Result<Vec<(SimTime, Vec<u8>)>, TraceError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        if bytes.len() >= 4 {
            check_magic(&bytes[..4])?;
        }
        return Err(TraceError::TruncatedHeader);
    }
    let big = check_magic(&bytes[..4])?;
    let u32_at = |b: &[u8], at: usize| -> u32 {
        let w = [b[at], b[at + 1], b[at + 2], b[at + 3]];
        if big {
            u32::from_be_bytes(w)
        } else {
            u32::from_le_bytes(w)
        }
    };
    let linktype = u32_at(bytes, 20);
    if linktype != LINKTYPE_RAW {
        return Err(TraceError::UnsupportedLinktype(linktype));
    }
    let mut out = Vec::new();
    let mut at = GLOBAL_HEADER_LEN;
    while at < bytes.len() {
        let index = out.len();
        if bytes.len() - at < RECORD_HEADER_LEN {
            return Err(TraceError::TruncatedRecord { index });
        }
        let sec = u32_at(bytes, at) as u64;
        let usec = u32_at(bytes, at + 4) as u64;
        let incl = u32_at(bytes, at + 8) as usize;
        at += RECORD_HEADER_LEN;
        if bytes.len() - at < incl {
            return Err(TraceError::TruncatedRecord { index });
        }
        out.push((SimTime::from_micros(sec * 1_000_000 + usec), bytes[at..at + incl].to_vec()));
        at += incl;
    }
    Ok(out)
}

/// Returns true for a big-endian file.
fn check_magic(b: &[u8]) -> Result<bool, TraceError> {
    let le = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    if le == PCAP_MAGIC {
        Ok(false)
    } else if le.swap_bytes() == PCAP_MAGIC {
        Ok(true)
    } else {
        Err(TraceError::BadMagic(le))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    AtoB,
    BtoA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proto {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PortClass {
    /// The responder's port, which a real capture would reproduce.
    Fixed,
    /// The initiator's port, chosen by the stack.
    Ephemeral,
}

/// A packet reduced to what a behavioral comparison should look at.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedPacket {
    pub direction: Direction,
    pub proto: Proto,
    pub tcp_flags: TcpFlags,
    /// Sequence number relative to the sender's first sequence number.
    pub rel_seq: Option<u32>,
    /// Acknowledgment relative to the receiver's first sequence number; only
    /// for segments carrying ACK.
    pub rel_ack: Option<u32>,
    pub payload_len: usize,
    pub src_port_class: PortClass,
}

impl fmt::Display for NormalizedPacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::AtoB => "A>B",
            Direction::BtoA => "B>A",
        };
        match self.proto {
            Proto::Udp => write!(f, "{dir} UDP len {}", self.payload_len),
            Proto::Tcp => {
                write!(f, "{dir} TCP {}", self.tcp_flags)?;
                if let Some(s) = self.rel_seq {
                    write!(f, " seq {s}")?;
                }
                if let Some(a) = self.rel_ack {
                    write!(f, " ack {a}")?;
                }
                write!(f, " len {}", self.payload_len)
            }
        }
    }
}

type Endpoint = (Ipv4Addr, u16);

struct Flow {
    proto: Proto,
    a: Endpoint,
    b: Endpoint,
    /// Destination of the first packet.
    responder: Endpoint,
}

/// Projects a single-conversation trace onto [`NormalizedPacket`]s.
///
/// Side A is `endpoint_a` or, when absent, the sender of the first packet.
pub fn normalize(trace: &[(SimTime, Vec<u8>)], endpoint_a: Option<Ipv4Addr>) -> Result<Vec<NormalizedPacket>, TraceError> {
    let mut flow: Option<Flow> = None;
    let mut isn_a: Option<u32> = None;
    let mut isn_b: Option<u32> = None;
    let mut out = Vec::with_capacity(trace.len());
    for (index, (_, bytes)) in trace.iter().enumerate() {
        let p = wire::parse(bytes).map_err(|e| TraceError::Malformed { index, reason: e.to_string() })?;
        let (proto, sport, dport) = match &p.transport {
            Transport::Tcp(s) => (Proto::Tcp, s.src_port, s.dst_port),
            Transport::Udp(d) => (Proto::Udp, d.src_port, d.dst_port),
        };
        let src = (p.src, sport);
        let dst = (p.dst, dport);
        let f = flow.get_or_insert_with(|| {
            let (a, b) = match endpoint_a {
                Some(ea) if ea == p.dst && ea != p.src => (dst, src),
                _ => (src, dst),
            };
            Flow { proto, a, b, responder: dst }
        });
        if f.proto != proto || !((src == f.a && dst == f.b) || (src == f.b && dst == f.a)) {
            return Err(TraceError::MultipleFlows { index });
        }
        let direction = if src == f.a { Direction::AtoB } else { Direction::BtoA };
        let src_port_class = if src == f.responder { PortClass::Fixed } else { PortClass::Ephemeral };
        let np = match p.transport {
            Transport::Udp(d) => NormalizedPacket {
                direction,
                proto,
                tcp_flags: TcpFlags::empty(),
                rel_seq: None,
                rel_ack: None,
                payload_len: d.payload.len(),
                src_port_class,
            },
            Transport::Tcp(s) => {
                let (mine, theirs) = match direction {
                    Direction::AtoB => (&mut isn_a, &isn_b),
                    Direction::BtoA => (&mut isn_b, &isn_a),
                };
                let isn = *mine.get_or_insert(s.seq);
                let rel_ack = if s.flags.contains(TcpFlags::ACK) {
                    theirs.map(|i| s.ack.wrapping_sub(i))
                } else {
                    None
                };
                NormalizedPacket {
                    direction,
                    proto,
                    tcp_flags: s.flags,
                    rel_seq: Some(s.seq.wrapping_sub(isn)),
                    rel_ack,
                    payload_len: s.payload.len(),
                    src_port_class,
                }
            }
        };
        out.push(np);
    }
    if let (Some(ea), Some(f)) = (endpoint_a, &flow) {
        if ea != f.a.0 && ea != f.b.0 {
            return Err(TraceError::EndpointNotInTrace(ea));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Equal,
    FirstDivergence { index: usize, a: NormalizedPacket, b: NormalizedPacket },
    LengthMismatch { a_len: usize, b_len: usize },
}

impl Verdict {
    pub fn is_equal(&self) -> bool {
        matches!(self, Verdict::Equal)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Equal => write!(f, "equal"),
            Verdict::FirstDivergence { index, a, b } => {
                write!(f, "first divergence at packet {index}: [{a}] vs [{b}]")
            }
            Verdict::LengthMismatch { a_len, b_len } => {
                write!(f, "length mismatch: {a_len} vs {b_len} packets")
            }
        }
    }
}

pub fn compare(a: &[NormalizedPacket], b: &[NormalizedPacket]) -> Verdict {
    for (index, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        if x != y {
            return Verdict::FirstDivergence { index, a: x.clone(), b: y.clone() };
        }
    }
    if a.len() != b.len() {
        return Verdict::LengthMismatch { a_len: a.len(), b_len: b.len() };
    }
    Verdict::Equal
}

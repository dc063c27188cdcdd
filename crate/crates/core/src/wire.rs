//! IPv4, TCP and UDP wire formats (big-endian on the wire) and the internet
//! checksum.

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub const IPV4_HEADER_LEN: usize = 20;
pub const TCP_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;
pub const DEFAULT_TTL: u8 = 64;

/// Accumulates 16-bit big-endian words into a 32-bit running sum. An odd
/// trailing byte is padded with a zero low byte.
pub fn checksum_partial(data: &[u8], initial: u32) -> u32 {
    let mut sum = initial as u64;
    let mut chunks = data.chunks_exact(2);
    for w in &mut chunks {
        sum += u16::from_be_bytes([w[0], w[1]]) as u64;
    }
    if let [last] = chunks.remainder() {
        sum += (*last as u64) << 8;
    }
    while sum >> 32 != 0 {
        sum = (sum & 0xffff_ffff) + (sum >> 32);
    }
    sum as u32
}

/// Folds a running sum to 16 bits and complements it.
pub fn fold(mut sum: u32) -> u16 {
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// RFC 1071 internet checksum of `data`, starting from the partial sum `initial`.
pub fn internet_checksum(data: &[u8], initial: u16) -> u16 {
    fold(checksum_partial(data, initial as u32))
}

/// Partial sum of the TCP/UDP pseudo-header.
pub fn pseudo_header_sum(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, len: usize) -> u32 {
    let mut ph = [0u8; 12];
    ph[0..4].copy_from_slice(&src.octets());
    ph[4..8].copy_from_slice(&dst.octets());
    ph[9] = proto;
    ph[10..12].copy_from_slice(&(len as u16).to_be_bytes());
    checksum_partial(&ph, 0)
}

#[derive(Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    pub const fn empty() -> TcpFlags {
        TcpFlags(0)
    }

    pub fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl std::ops::BitOrAssign for TcpFlags {
    fn bitor_assign(&mut self, rhs: TcpFlags) {
        self.0 |= rhs.0;
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [(Self::SYN, "SYN"), (Self::FIN, "FIN"), (Self::RST, "RST"), (Self::PSH, "PSH"), (Self::ACK, "ACK"), (Self::URG, "URG")];
        let set: Vec<&str> = names.iter().filter(|(fl, _)| self.contains(*fl)).map(|(_, n)| *n).collect();
        if set.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&set.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    /// MSS option; only ever sent on SYN segments.
    pub mss: Option<u16>,
    pub payload: Vec<u8>,
}

impl TcpSegment {
    /// Sequence space consumed: payload plus one for SYN and for FIN.
    pub fn seq_len(&self) -> u32 {
        self.payload.len() as u32
            + self.flags.contains(TcpFlags::SYN) as u32
            + self.flags.contains(TcpFlags::FIN) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpDatagram {
    pub src_port: u16,
    pub dst_port: u16,
    /// Checksum field as found on the wire; 0 means "not computed".
    pub checksum: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Tcp(TcpSegment),
    Udp(UdpDatagram),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub ttl: u8,
    pub ident: u16,
    pub transport: Transport,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated packet: {0}")]
    Truncated(&'static str),
    #[error("not an IPv4 packet")]
    BadVersion,
    #[error("IP options or fragmentation not supported")]
    Unsupported,
    #[error("IPv4 header checksum mismatch")]
    BadIpChecksum,
    #[error("TCP checksum mismatch")]
    BadTcpChecksum,
    #[error("UDP checksum mismatch")]
    BadUdpChecksum,
    #[error("unsupported protocol {0}")]
    UnknownProtocol(u8),
}

impl WireError {
    pub fn is_checksum(&self) -> bool {
        matches!(self, WireError::BadIpChecksum | WireError::BadTcpChecksum | WireError::BadUdpChecksum)
    }
}

fn ipv4_header(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, ttl: u8, ident: u16, payload_len: usize) -> [u8; IPV4_HEADER_LEN] {
    let mut h = [0u8; IPV4_HEADER_LEN];
    h[0] = 0x45;
    h[2..4].copy_from_slice(&((IPV4_HEADER_LEN + payload_len) as u16).to_be_bytes());
    h[4..6].copy_from_slice(&ident.to_be_bytes());
    h[8] = ttl;
    h[9] = proto;
    h[12..16].copy_from_slice(&src.octets());
    h[16..20].copy_from_slice(&dst.octets());
    let c = internet_checksum(&h, 0);
    h[10..12].copy_from_slice(&c.to_be_bytes());
    h
}

pub fn encode_tcp(src: Ipv4Addr, dst: Ipv4Addr, ttl: u8, ident: u16, seg: &TcpSegment) -> Vec<u8> {
    let opt_len = if seg.mss.is_some() { 4 } else { 0 };
    let tcp_len = TCP_HEADER_LEN + opt_len + seg.payload.len();
    let mut out = Vec::with_capacity(IPV4_HEADER_LEN + tcp_len);
    out.extend_from_slice(&ipv4_header(src, dst, PROTO_TCP, ttl, ident, tcp_len));
    let t = out.len();
    out.extend_from_slice(&seg.src_port.to_be_bytes());
    out.extend_from_slice(&seg.dst_port.to_be_bytes());
    out.extend_from_slice(&seg.seq.to_be_bytes());
    out.extend_from_slice(&seg.ack.to_be_bytes());
    out.push((((TCP_HEADER_LEN + opt_len) / 4) as u8) << 4);
    out.push(seg.flags.0);
    out.extend_from_slice(&seg.window.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    if let Some(mss) = seg.mss {
        out.extend_from_slice(&[2, 4]);
        out.extend_from_slice(&mss.to_be_bytes());
    }
    out.extend_from_slice(&seg.payload);
    let sum = fold(checksum_partial(&out[t..], pseudo_header_sum(src, dst, PROTO_TCP, tcp_len)));
    out[t + 16..t + 18].copy_from_slice(&sum.to_be_bytes());
    out
}

/// Encodes a UDP datagram. With `checksum` off the checksum field is 0.
pub fn encode_udp(src: Ipv4Addr, dst: Ipv4Addr, ttl: u8, ident: u16, src_port: u16, dst_port: u16, payload: &[u8], checksum: bool) -> Vec<u8> {
    let udp_len = UDP_HEADER_LEN + payload.len();
    let mut out = Vec::with_capacity(IPV4_HEADER_LEN + udp_len);
    out.extend_from_slice(&ipv4_header(src, dst, PROTO_UDP, ttl, ident, udp_len));
    let u = out.len();
    out.extend_from_slice(&src_port.to_be_bytes());
    out.extend_from_slice(&dst_port.to_be_bytes());
    out.extend_from_slice(&(udp_len as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(payload);
    if checksum {
        let mut sum = fold(checksum_partial(&out[u..], pseudo_header_sum(src, dst, PROTO_UDP, udp_len)));
        if sum == 0 {
            sum = 0xffff;
        }
        out[u + 6..u + 8].copy_from_slice(&sum.to_be_bytes());
    }
    out
}

/// Parses and verifies an IPv4 packet carrying TCP or UDP.
pub fn parse(bytes: &[u8]) -> Result<Packet, WireError> {
    if bytes.len() < IPV4_HEADER_LEN {
        return Err(WireError::Truncated("IPv4 header"));
    }
    if bytes[0] >> 4 != 4 {
        return Err(WireError::BadVersion);
    }
    if bytes[0] & 0x0f != 5 {
        return Err(WireError::Unsupported);
    }
    let total = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    if total < IPV4_HEADER_LEN || total > bytes.len() {
        return Err(WireError::Truncated("IPv4 total length"));
    }
    if internet_checksum(&bytes[..IPV4_HEADER_LEN], 0) != 0 {
        return Err(WireError::BadIpChecksum);
    }
    let frag = u16::from_be_bytes([bytes[6], bytes[7]]);
    if frag & 0x3fff != 0 {
        return Err(WireError::Unsupported);
    }
    let src = Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]);
    let dst = Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]);
    let ttl = bytes[8];
    let ident = u16::from_be_bytes([bytes[4], bytes[5]]);
    let body = &bytes[IPV4_HEADER_LEN..total];
    let transport = match bytes[9] {
        PROTO_TCP => Transport::Tcp(parse_tcp(src, dst, body)?),
        PROTO_UDP => Transport::Udp(parse_udp(src, dst, body)?),
        p => return Err(WireError::UnknownProtocol(p)),
    };
    Ok(Packet { src, dst, ttl, ident, transport })
}

fn parse_tcp(src: Ipv4Addr, dst: Ipv4Addr, b: &[u8]) -> Result<TcpSegment, WireError> {
    if b.len() < TCP_HEADER_LEN {
        return Err(WireError::Truncated("TCP header"));
    }
    let off = ((b[12] >> 4) as usize) * 4;
    if off < TCP_HEADER_LEN || off > b.len() {
        return Err(WireError::Truncated("TCP data offset"));
    }
    if fold(checksum_partial(b, pseudo_header_sum(src, dst, PROTO_TCP, b.len()))) != 0 {
        return Err(WireError::BadTcpChecksum);
    }
    let be16 = |i: usize| u16::from_be_bytes([b[i], b[i + 1]]);
    let be32 = |i: usize| u32::from_be_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    let mut mss = None;
    let mut opts = &b[TCP_HEADER_LEN..off];
    while let Some(&kind) = opts.first() {
        match kind {
            0 => break,
            1 => opts = &opts[1..],
            _ => {
                let Some(&len) = opts.get(1) else { break };
                let len = len as usize;
                if len < 2 || len > opts.len() {
                    break;
                }
                if kind == 2 && len == 4 {
                    mss = Some(u16::from_be_bytes([opts[2], opts[3]]));
                }
                opts = &opts[len..];
            }
        }
    }
    Ok(TcpSegment {
        src_port: be16(0),
        dst_port: be16(2),
        seq: be32(4),
        ack: be32(8),
        flags: TcpFlags(b[13] & 0x3f),
        window: be16(14),
        mss,
        payload: b[off..].to_vec(),
    })
}

fn parse_udp(src: Ipv4Addr, dst: Ipv4Addr, b: &[u8]) -> Result<UdpDatagram, WireError> {
    if b.len() < UDP_HEADER_LEN {
        return Err(WireError::Truncated("UDP header"));
    }
    let len = u16::from_be_bytes([b[4], b[5]]) as usize;
    if len < UDP_HEADER_LEN || len > b.len() {
        return Err(WireError::Truncated("UDP length"));
    }
    let b = &b[..len];
    let checksum = u16::from_be_bytes([b[6], b[7]]);
    if checksum != 0 && fold(checksum_partial(b, pseudo_header_sum(src, dst, PROTO_UDP, len))) != 0 {
        return Err(WireError::BadUdpChecksum);
    }
    Ok(UdpDatagram {
        src_port: u16::from_be_bytes([b[0], b[1]]),
        dst_port: u16::from_be_bytes([b[2], b[3]]),
        checksum,
        payload: b[UDP_HEADER_LEN..].to_vec(),
    })
}

/// True if the IPv4 header and the TCP/UDP checksum (with pseudo-header)
/// all fold to zero. UDP datagrams with a zero checksum field only have their
/// IP header checked.
pub fn checksums_fold_to_zero(bytes: &[u8]) -> bool {
    if bytes.len() < IPV4_HEADER_LEN || internet_checksum(&bytes[..IPV4_HEADER_LEN], 0) != 0 {
        return false;
    }
    let total = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    if total > bytes.len() || total < IPV4_HEADER_LEN {
        return false;
    }
    let src = Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]);
    let dst = Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]);
    let body = &bytes[IPV4_HEADER_LEN..total];
    match bytes[9] {
        PROTO_TCP => fold(checksum_partial(body, pseudo_header_sum(src, dst, PROTO_TCP, body.len()))) == 0,
        PROTO_UDP => {
            body.len() >= UDP_HEADER_LEN
                && (u16::from_be_bytes([body[6], body[7]]) == 0
                    || fold(checksum_partial(body, pseudo_header_sum(src, dst, PROTO_UDP, body.len()))) == 0)
        }
        _ => false,
    }
}

/// Decrements the TTL in place and patches the header checksum; returns false
/// once the TTL is exhausted.
pub fn decrement_ttl(bytes: &mut [u8]) -> bool {
    if bytes.len() < IPV4_HEADER_LEN || bytes[8] <= 1 {
        return false;
    }
    bytes[8] -= 1;
    bytes[10] = 0;
    bytes[11] = 0;
    let c = internet_checksum(&bytes[..IPV4_HEADER_LEN], 0);
    bytes[10..12].copy_from_slice(&c.to_be_bytes());
    true
}

/// Destination address of an IPv4 packet, without validation beyond length.
pub fn peek_dst(bytes: &[u8]) -> Option<Ipv4Addr> {
    (bytes.len() >= IPV4_HEADER_LEN).then(|| Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]))
}

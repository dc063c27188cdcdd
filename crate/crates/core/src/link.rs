//! Point-to-point links: serialization delay, propagation latency, Bernoulli
//! loss, and a generic link-layer fragmentation scheme.
//!
//! Every IP packet crossing a link is carried in one or more link frames, each
//! prefixed by an 8-byte fragment header (all fields big-endian):
//!
//! ```text
//! 0      2        4           6          8
//! +------+--------+-----------+----------+---------
//! |  id  | offset | total_len | reserved | payload ...
//! +------+--------+-----------+----------+---------
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rng::Rng;
use crate::time::SimTime;

pub const FRAGMENT_HEADER_LEN: usize = 8;

/// Smallest usable `frag_threshold`: header plus one payload byte.
pub const MIN_FRAG_THRESHOLD: usize = FRAGMENT_HEADER_LEN + 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("frame of {len} bytes exceeds link frame limit {max}")]
    FrameTooLarge { len: usize, max: usize },
    #[error("empty frame")]
    EmptyFrame,
    #[error("invalid link parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub latency: SimTime,
    pub bandwidth_bps: u64,
    pub loss_prob: f64,
    /// Largest link frame (fragment header included), in bytes.
    pub frag_threshold: usize,
}

impl Link {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.bandwidth_bps == 0 {
            return Err(LinkError::Invalid("bandwidth_bps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::Invalid(format!("loss_prob {} outside [0, 1]", self.loss_prob)));
        }
        if self.frag_threshold < MIN_FRAG_THRESHOLD {
            return Err(LinkError::Invalid(format!(
                "frag_threshold {} below minimum {}",
                self.frag_threshold, MIN_FRAG_THRESHOLD
            )));
        }
        Ok(())
    }

    /// `ceil(len * 8 * 10^6 / bandwidth_bps)` microseconds.
    pub fn serialization_time(&self, len: usize) -> SimTime {
        let bits = len as u128 * 8 * 1_000_000;
        let bw = self.bandwidth_bps as u128;
        SimTime::from_micros(bits.div_ceil(bw) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Arrives(SimTime),
    Dropped,
}

/// Puts one frame on the wire at `depart`. Exactly one uniform draw is taken
/// from `rng` per call, whatever the loss probability.
pub fn link_transmit(link: &Link, frame: &[u8], depart: SimTime, rng: &mut Rng) -> Result<Delivery, LinkError> {
    if frame.is_empty() {
        return Err(LinkError::EmptyFrame);
    }
    if frame.len() > link.frag_threshold {
        return Err(LinkError::FrameTooLarge { len: frame.len(), max: link.frag_threshold });
    }
    let draw = rng.next_f64();
    if draw < link.loss_prob {
        return Ok(Delivery::Dropped);
    }
    let arrival = depart
        .saturating_add(link.serialization_time(frame.len()))
        .saturating_add(link.latency);
    Ok(Delivery::Arrives(arrival))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub datagram_id: u16,
    pub offset: u16,
    pub total_len: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FragmentError {
    #[error("datagram of {0} bytes exceeds 65535")]
    DatagramTooLarge(usize),
    #[error("fragment threshold {0} leaves no room for payload")]
    ThresholdTooSmall(usize),
    #[error("inconsistent fragments: {0}")]
    InconsistentFragments(String),
    #[error("malformed fragment frame: {0}")]
    Malformed(String),
}

impl Fragment {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAGMENT_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.datagram_id.to_be_bytes());
        out.extend_from_slice(&self.offset.to_be_bytes());
        out.extend_from_slice(&self.total_len.to_be_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Fragment, FragmentError> {
        if frame.len() < FRAGMENT_HEADER_LEN {
            return Err(FragmentError::Malformed(format!("{} bytes, header needs 8", frame.len())));
        }
        let be = |i: usize| u16::from_be_bytes([frame[i], frame[i + 1]]);
        let frag = Fragment {
            datagram_id: be(0),
            offset: be(2),
            total_len: be(4),
            payload: frame[FRAGMENT_HEADER_LEN..].to_vec(),
        };
        if frag.offset as usize + frag.payload.len() > frag.total_len as usize {
            return Err(FragmentError::Malformed(format!(
                "offset {} + {} payload bytes past total {}",
                frag.offset,
                frag.payload.len(),
                frag.total_len
            )));
        }
        Ok(frag)
    }

    fn end(&self) -> usize {
        self.offset as usize + self.payload.len()
    }
}

/// Splits `datagram` into frames of at most `threshold` bytes each
/// (`threshold - 8` payload bytes per fragment).
pub fn fragment(datagram: &[u8], threshold: usize, id: u16) -> Result<Vec<Fragment>, FragmentError> {
    if datagram.len() > u16::MAX as usize {
        return Err(FragmentError::DatagramTooLarge(datagram.len()));
    }
    if threshold < MIN_FRAG_THRESHOLD {
        return Err(FragmentError::ThresholdTooSmall(threshold));
    }
    let effective = threshold - FRAGMENT_HEADER_LEN;
    let total_len = datagram.len() as u16;
    if datagram.is_empty() {
        return Ok(vec![Fragment { datagram_id: id, offset: 0, total_len, payload: Vec::new() }]);
    }
    Ok(datagram
        .chunks(effective)
        .enumerate()
        .map(|(i, chunk)| Fragment {
            datagram_id: id,
            offset: (i * effective) as u16,
            total_len,
            payload: chunk.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reassembled {
    Complete(Vec<u8>),
    Incomplete,
}

/// Rebuilds one datagram from an unordered set of fragments. Duplicates are
/// accepted as long as overlapping bytes agree.
pub fn reassemble(fragments: &[Fragment]) -> Result<Reassembled, FragmentError> {
    let Some(first) = fragments.first() else {
        return Ok(Reassembled::Incomplete);
    };
    let (id, total) = (first.datagram_id, first.total_len as usize);
    let mut data = vec![0u8; total];
    let mut filled = vec![false; total];
    for f in fragments {
        if f.datagram_id != id {
            return Err(FragmentError::InconsistentFragments(format!(
                "datagram ids {} and {} mixed",
                id, f.datagram_id
            )));
        }
        if f.total_len as usize != total {
            return Err(FragmentError::InconsistentFragments(format!(
                "total_len {} vs {} for datagram {}",
                total, f.total_len, id
            )));
        }
        if f.end() > total {
            return Err(FragmentError::InconsistentFragments(format!(
                "fragment at {} runs past total_len {}",
                f.offset, total
            )));
        }
        for (k, &b) in f.payload.iter().enumerate() {
            let at = f.offset as usize + k;
            if filled[at] && data[at] != b {
                return Err(FragmentError::InconsistentFragments(format!(
                    "byte {} differs between overlapping fragments of datagram {}",
                    at, id
                )));
            }
            data[at] = b;
            filled[at] = true;
        }
    }
    if filled.iter().all(|&f| f) {
        Ok(Reassembled::Complete(data))
    } else {
        Ok(Reassembled::Incomplete)
    }
}

#[derive(Debug)]
struct Partial {
    first_seen: SimTime,
    fragments: Vec<Fragment>,
}

/// Receive-side reassembly state for one link direction.
#[derive(Debug)]
pub struct Reassembler {
    timeout: SimTime,
    partial: BTreeMap<u16, Partial>,
    discarded: u64,
}

impl Reassembler {
    pub fn new(timeout: SimTime) -> Reassembler {
        Reassembler { timeout, partial: BTreeMap::new(), discarded: 0 }
    }

    /// Datagrams abandoned because of timeout or inconsistency.
    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    /// Feeds one fragment; returns the datagram once it is complete.
    pub fn push(&mut self, frag: Fragment, now: SimTime) -> Option<Vec<u8>> {
        let stale: Vec<u16> = self
            .partial
            .iter()
            .filter(|(_, p)| now.saturating_sub(p.first_seen) > self.timeout)
            .map(|(&id, _)| id)
            .collect();
        for id in stale {
            self.partial.remove(&id);
            self.discarded += 1;
        }

        let id = frag.datagram_id;
        let entry = self.partial.entry(id).or_insert_with(|| Partial { first_seen: now, fragments: Vec::new() });
        entry.fragments.push(frag);
        match reassemble(&entry.fragments) {
            Ok(Reassembled::Complete(d)) => {
                self.partial.remove(&id);
                Some(d)
            }
            Ok(Reassembled::Incomplete) => None,
            Err(_) => {
                self.partial.remove(&id);
                self.discarded += 1;
                None
            }
        }
    }
}

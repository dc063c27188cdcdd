//! Canonical experiment scenarios.

use thiserror::Error;

use nsc_core::full::FullTcpConfig;
use nsc_core::link::Link;
use nsc_core::uip::UipConfig;
use nsc_core::SimTime;

use crate::scenario::{AppSpec, LinkSpec, NodeConfig, NodeSpec, Role, Scenario, TraceSpec};

pub const PRESETS: [&str; 4] = ["delayed-ack", "split-hack", "frag-sweep", "hetero-prr"];

pub const FRAG_THRESHOLDS: [usize; 5] = [60, 90, 127, 200, 400];
pub const HETERO_LOSS: [f64; 4] = [0.0, 0.05, 0.1, 0.2];

/// One-way latency of the delayed-ack link: half of a 10 ms RTT.
pub const PAIR_LATENCY: SimTime = SimTime::from_micros(5000);
pub const PAIR_BANDWIDTH: u64 = 10_000_000;
pub const PAIR_BYTES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown preset `{0}`; known presets: delayed-ack, split-hack, frag-sweep, hetero-prr")]
pub struct UnknownPreset(pub String);

fn uip(id: &str, split: bool, label: Option<&str>) -> NodeSpec {
    NodeSpec {
        id: id.into(),
        label: label.map(str::to_string),
        config: NodeConfig::Uip(UipConfig { tcp_split: split, ..UipConfig::default() }),
    }
}

fn full(id: &str) -> NodeSpec {
    NodeSpec { id: id.into(), label: None, config: NodeConfig::Full(FullTcpConfig::default()) }
}

fn link(a: &str, b: &str, latency: SimTime, bandwidth_bps: u64, loss_prob: f64, frag_threshold: usize) -> LinkSpec {
    LinkSpec { a: a.into(), b: b.into(), link: Link { latency, bandwidth_bps, loss_prob, frag_threshold } }
}

fn sender(node: &str, peer: &str, port: u16, bytes: u64, start: SimTime) -> AppSpec {
    AppSpec { peer: Some(peer.into()), port, bytes_total: bytes, start, ..AppSpec::new(node, Role::BulkSender) }
}

fn sink(node: &str, port: u16) -> AppSpec {
    AppSpec { port, ..AppSpec::new(node, Role::Sink) }
}

/// uIP bulk sender to a full-stack sink over a 10 ms RTT link.
fn pair(name: &str, split: bool) -> Scenario {
    Scenario {
        name: name.into(),
        seed: 1,
        duration: SimTime::from_secs(10),
        nodes: vec![uip("mote", split, None), full("host")],
        links: vec![link("mote", "host", PAIR_LATENCY, PAIR_BANDWIDTH, 0.0, 1500)],
        apps: vec![sender("mote", "host", 80, PAIR_BYTES, SimTime::ZERO), sink("host", 80)],
        traces: vec![TraceSpec { link: 0, path: format!("{name}.pcap") }],
    }
}

fn frag_sweep() -> Vec<Scenario> {
    FRAG_THRESHOLDS
        .iter()
        .map(|&th| {
            let name = format!("frag-sweep-th{th}");
            Scenario {
                name: name.clone(),
                seed: 2,
                duration: SimTime::from_secs(30),
                nodes: vec![uip("mote", false, Some(&format!("th{th}"))), full("host")],
                links: vec![link("mote", "host", PAIR_LATENCY, 250_000, 0.0, th)],
                apps: vec![sender("mote", "host", 80, 10_000, SimTime::ZERO), sink("host", 80)],
                traces: vec![TraceSpec { link: 0, path: format!("{name}.pcap") }],
            }
        })
        .collect()
}

/// Four constrained senders behind one gateway: two with the split hack
/// (variant A) and two without (variant B).
fn hetero() -> Vec<Scenario> {
    HETERO_LOSS
        .iter()
        .map(|&p| {
            let senders = [("a1", true, "A"), ("a2", true, "A"), ("b1", false, "B"), ("b2", false, "B")];
            let mut s = Scenario::empty(&format!("hetero-prr-p{p}"));
            s.seed = 7;
            s.duration = SimTime::from_secs(60);
            for (i, (id, split, label)) in senders.iter().enumerate() {
                s.nodes.push(uip(id, *split, Some(label)));
                s.links.push(link(id, "gw", PAIR_LATENCY, 250_000, p, 127));
                let port = 80 + i as u16;
                s.apps.push(sender(id, "server", port, 20_000, SimTime::from_millis(10 * i as u64)));
                s.apps.push(sink("server", port));
            }
            s.nodes.push(full("gw"));
            s.nodes.push(full("server"));
            s.links.push(link("gw", "server", SimTime::from_millis(1), PAIR_BANDWIDTH, 0.0, 1500));
            s
        })
        .collect()
}

/// The scenario variants of preset `name`.
pub fn preset(name: &str) -> Result<Vec<Scenario>, UnknownPreset> {
    match name {
        "delayed-ack" => Ok(vec![pair("delayed-ack", false)]),
        "split-hack" => Ok(vec![pair("split-hack", true)]),
        "frag-sweep" => Ok(frag_sweep()),
        "hetero-prr" => Ok(hetero()),
        _ => Err(UnknownPreset(name.to_string())),
    }
}

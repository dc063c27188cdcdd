//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../globalizer/tests/oracle/mod.rs"]
mod oracle;

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nsc_cli::presets::{FRAG_THRESHOLDS, HETERO_LOSS};
use nsc_cli::report;
use nsc_cli::scenario::{AppSpec, LinkSpec, NodeConfig, NodeSpec, Role, TraceSpec};
use nsc_cli::{preset, run_scenario, run_scenario_with, Observer, RunOutput, Scenario};
use nsc_core::cradle::{NetstackDrivers, StackId, StackRegistry};
use nsc_core::full::{FullStack, FullTcpConfig};
use nsc_core::link::Link;
use nsc_core::rng::Rng;
use nsc_core::tcp::TcpState;
use nsc_core::trace::{self, Direction, NormalizedPacket, PortClass, Proto};
use nsc_core::uip::{AppContext, AppFlags, ConnHandle, SendCache, UipApp, UipConfig};
use nsc_core::wire::{self, TcpFlags, Transport};
use nsc_core::SimTime;
use nsc_globalizer::{globalize_source, tokenize, TokenKind, TransformConfig};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// Pinned tolerances.
const GOLDEN_MAX_WALL: Duration = Duration::from_secs(1);
const DELAYED_ACK_TARGET_BPS: f64 = 360.0 * 8.0 / 0.210;
const DELAYED_ACK_TOLERANCE: f64 = 0.15;
const SPLIT_MIN_RATIO: f64 = 10.0;
const PAIR_MAX_SIM: SimTime = SimTime::from_secs(10);
const PAIR_MAX_WALL: Duration = Duration::from_secs(5);
const STOP_AND_WAIT_SCENARIOS: u64 = 1000;
const ISOLATION_INSTANCES: usize = 40;
const ISOLATION_INTERLEAVINGS: usize = 100;
const CHECKSUM_INPUTS: usize = 100_000;
const MIN_CORPUS_FILES: usize = 30;
const SWEEP_LOSS: f64 = 0.1;
const PRR_SIGMAS: f64 = 3.0;

const GOLDEN_INPUT: &str = "struct uip_conn *uip_conn; /* current connection */

void uip_process(uint8_t flag)
{
  ...
  uip_conn = NULL;
}
";

const GOLDEN_OUTPUT: &str = "struct uip_conn *global_uip_conn[NUM_STACKS];

void uip_process(uint8_t flag)
{
  ...
  global_uip_conn[get_stack_id()] = NULL;
}
";

fn only(name: &str) -> Result<Scenario, String> {
    preset(name).map_err(|e| e.to_string())?.pop().ok_or_else(|| format!("{name} is empty"))
}

fn run(s: &Scenario) -> Result<RunOutput, String> {
    run_scenario(s).map_err(|e| format!("{}: {e}", s.name))
}

fn significant(src: &str) -> Vec<String> {
    tokenize(src)
        .unwrap()
        .into_iter()
        .filter(|t| !matches!(t.kind, TokenKind::Whitespace | TokenKind::Comment))
        .map(|t| t.text)
        .collect()
}

fn c1_globalizer_golden() -> Check {
    let t0 = Instant::now();
    let out = globalize_source(GOLDEN_INPUT, &TransformConfig::default()).map_err(|e| e.to_string())?;
    let wall = t0.elapsed();
    ensure!(significant(&out.source) == significant(GOLDEN_OUTPUT), "output differs:\n{}", out.source);
    ensure!(out.source.contains("struct uip_conn *global_uip_conn[NUM_STACKS];"), "declaration missing");
    ensure!(out.source.contains("global_uip_conn[get_stack_id()] = NULL;"), "reference missing");
    ensure!(wall < GOLDEN_MAX_WALL, "took {wall:?}");
    Ok(format!("golden input rewritten to expected output modulo whitespace in {wall:?}"))
}

fn c2_delayed_ack() -> Check {
    let da = only("delayed-ack")?;
    let sh = only("split-hack")?;
    ensure!(da.duration <= PAIR_MAX_SIM && sh.duration <= PAIR_MAX_SIM, "simulated time exceeds 10 s");
    let t0 = Instant::now();
    let a = run(&da)?;
    let b = run(&sh)?;
    let wall = t0.elapsed();
    let (ga, gb) = (a.flows[0].goodput_bps, b.flows[0].goodput_bps);
    let err = (ga - DELAYED_ACK_TARGET_BPS).abs() / DELAYED_ACK_TARGET_BPS;
    ensure!(err <= DELAYED_ACK_TOLERANCE, "delayed-ack goodput {ga:.0} bps is {:.1}% off {DELAYED_ACK_TARGET_BPS:.0}", err * 100.0);
    ensure!(gb >= SPLIT_MIN_RATIO * ga, "split-hack goodput {gb:.0} bps is only {:.1}x", gb / ga);
    ensure!(wall < PAIR_MAX_WALL, "wall time {wall:?}");
    Ok(format!(
        "delayed-ack {ga:.0} bps ({:+.1}% of {DELAYED_ACK_TARGET_BPS:.0}), split-hack {gb:.0} bps ({:.1}x), wall {wall:?}",
        (ga / DELAYED_ACK_TARGET_BPS - 1.0) * 100.0,
        gb / ga
    ))
}

/// Tracks distinct unacknowledged data segments sent by one uIP node.
struct StopAndWait {
    node: usize,
    outstanding: BTreeMap<u32, u32>,
    max: usize,
    segments: u64,
}

impl Observer for StopAndWait {
    fn node_output(&mut self, _now: SimTime, node: usize, packet: &[u8]) {
        if node != self.node {
            return;
        }
        if let Ok(wire::Packet { transport: Transport::Tcp(seg), .. }) = wire::parse(packet) {
            if !seg.payload.is_empty() {
                self.segments += 1;
                self.outstanding.insert(seg.seq, seg.seq.wrapping_add(seg.payload.len() as u32));
                self.max = self.max.max(self.outstanding.len());
            }
        }
    }

    fn node_input(&mut self, _now: SimTime, node: usize, packet: &[u8]) {
        if node != self.node {
            return;
        }
        if let Ok(wire::Packet { transport: Transport::Tcp(seg), .. }) = wire::parse(packet) {
            if seg.flags.contains(TcpFlags::ACK) {
                self.outstanding.retain(|_, end| (seg.ack.wrapping_sub(*end) as i32) < 0);
            }
        }
    }
}

fn pair_scenario(name: &str, seed: u64, split: bool, link: Link, bytes: u64, duration: SimTime) -> Scenario {
    Scenario {
        name: name.into(),
        seed,
        duration,
        nodes: vec![
            NodeSpec {
                id: "mote".into(),
                label: None,
                config: NodeConfig::Uip(UipConfig { tcp_split: split, ..UipConfig::default() }),
            },
            NodeSpec { id: "host".into(), label: None, config: NodeConfig::Full(FullTcpConfig::default()) },
        ],
        links: vec![LinkSpec { a: "mote".into(), b: "host".into(), link }],
        apps: vec![
            AppSpec { peer: Some("host".into()), bytes_total: bytes, ..AppSpec::new("mote", Role::BulkSender) },
            AppSpec::new("host", Role::Sink),
        ],
        traces: vec![],
    }
}

fn c3_stop_and_wait() -> Check {
    let mut rng = Rng::new(2024);
    let (mut segments, mut worst) = (0u64, [0usize; 2]);
    for i in 0..STOP_AND_WAIT_SCENARIOS {
        let split = rng.below(2) == 1;
        let link = Link {
            latency: SimTime::from_micros(1000 + rng.below(99_001)),
            bandwidth_bps: 250_000,
            loss_prob: rng.next_f64() * 0.3,
            frag_threshold: 127,
        };
        let s = pair_scenario(&format!("saw-{i}"), i, split, link.clone(), 1500, SimTime::from_secs(20));
        let mut obs = StopAndWait { node: 0, outstanding: BTreeMap::new(), max: 0, segments: 0 };
        run_scenario_with(&s, &mut obs).map_err(|e| e.to_string())?;
        let limit = if split { 2 } else { 1 };
        ensure!(
            obs.max <= limit,
            "scenario {i} (split {split}, loss {:.3}, latency {}): {} unacked data segments",
            link.loss_prob,
            link.latency,
            obs.max
        );
        segments += obs.segments;
        worst[split as usize] = worst[split as usize].max(obs.max);
    }
    ensure!(segments > STOP_AND_WAIT_SCENARIOS, "too little traffic: {segments} data segments");
    Ok(format!(
        "{STOP_AND_WAIT_SCENARIOS} scenarios, {segments} data segments, max unacked {} (split off) / {} (split on)",
        worst[0], worst[1]
    ))
}

const PEER: Ipv4Addr = Ipv4Addr::new(10, 0, 1, 1);

/// Sends a fixed amount of patterned data, then closes.
struct Sender {
    remaining: usize,
    sent: usize,
    cache: SendCache,
}

impl UipApp for Sender {
    fn appcall(&mut self, ctx: &mut AppContext<'_>) {
        if ctx.flags().contains(AppFlags::REXMIT) {
            let _ = self.cache.resend(ctx);
            return;
        }
        if ctx.conn().state != TcpState::Established || ctx.conn().inflight_len > 0 {
            return;
        }
        if self.remaining == 0 {
            ctx.close();
            return;
        }
        let chunk: Vec<u8> = (self.sent..self.sent + self.remaining.min(ctx.mss())).map(|i| i as u8).collect();
        if let Ok(n) = self.cache.send(ctx, &chunk) {
            self.sent += n;
            self.remaining -= n;
        }
    }
}

/// One uIP instance and its private full-stack peer, advanced in 100 ms
/// steps. Every 7th uIP frame is lost.
struct Pair {
    id: StackId,
    index: usize,
    peer: FullStack,
    to_uip: VecDeque<Vec<u8>>,
    handle: Option<ConnHandle>,
    steps: u64,
    log: Vec<(SimTime, Vec<u8>)>,
    sent: usize,
}

const PAIR_STEPS: u64 = 120;

fn uip_addr(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 0, i as u8 + 1)
}

impl Pair {
    fn new(reg: &mut StackRegistry<Sender>, index: usize) -> Pair {
        let app = Sender { remaining: 1000 + 37 * index, sent: 0, cache: SendCache::default() };
        let id = reg
            .create_instance(UipConfig::default(), NetstackDrivers::nsc(), uip_addr(index), app, index as u64)
            .expect("instance slot");
        let mut peer = FullStack::new(FullTcpConfig::default(), PEER, 1000 + index as u64);
        peer.listen(80);
        Pair { id, index, peer, to_uip: VecDeque::new(), handle: None, steps: 0, log: Vec::new(), sent: 0 }
    }

    fn feed_peer(&mut self, frames: Vec<Vec<u8>>, now: SimTime) {
        for f in frames {
            self.log.push((now, f.clone()));
            self.sent += 1;
            if self.sent % 7 == 3 {
                continue;
            }
            for r in self.peer.input(&f, now) {
                self.log.push((now, r.clone()));
                self.to_uip.push_back(r);
            }
        }
    }

    fn step(&mut self, reg: &StackRegistry<Sender>) {
        let now = SimTime::from_millis(100 * self.steps);
        self.steps += 1;
        for r in self.peer.on_timer(now) {
            self.log.push((now, r.clone()));
            self.to_uip.push_back(r);
        }
        if self.handle.is_none() {
            let h = reg.with_instance(self.id, |i| i.stack_mut().tcp_connect(PEER, 80).unwrap()).unwrap();
            self.handle = Some(h);
            let out = reg.poll(self.id, h, now).unwrap();
            self.feed_peer(out, now);
        }
        if self.steps % 5 == 0 {
            let out = reg.tick(self.id, now).unwrap();
            self.feed_peer(out, now);
        }
        while let Some(f) = self.to_uip.pop_front() {
            let out = reg.inject_frame(self.id, &f, now).unwrap();
            self.feed_peer(out, now);
        }
    }

    fn normalized(&self) -> Result<Vec<NormalizedPacket>, String> {
        trace::normalize(&self.log, Some(uip_addr(self.index))).map_err(|e| e.to_string())
    }
}

fn c4_isolation() -> Check {
    let n = ISOLATION_INSTANCES;
    let mut solo = Vec::with_capacity(n);
    for i in 0..n {
        let mut reg = StackRegistry::new(1);
        let mut p = Pair::new(&mut reg, i);
        for _ in 0..PAIR_STEPS {
            p.step(&reg);
        }
        ensure!(p.log.len() > 10, "instance {i} produced only {} packets", p.log.len());
        solo.push(p.normalized()?);
    }
    let mut rng = Rng::new(40);
    let mut divergences = 0;
    for _ in 0..ISOLATION_INTERLEAVINGS {
        let mut reg = StackRegistry::new(n);
        let mut pairs: Vec<Pair> = (0..n).map(|i| Pair::new(&mut reg, i)).collect();
        let mut live: Vec<usize> = (0..n).collect();
        while !live.is_empty() {
            let k = rng.below(live.len() as u64) as usize;
            let i = live[k];
            pairs[i].step(&reg);
            if pairs[i].steps == PAIR_STEPS {
                live.swap_remove(k);
            }
        }
        for p in &pairs {
            if p.normalized()? != solo[p.index] {
                divergences += 1;
            }
        }
    }
    ensure!(divergences == 0, "{divergences} per-instance traces diverged from solo runs");
    let packets: usize = solo.iter().map(Vec::len).sum();
    Ok(format!("{n} instances x {ISOLATION_INTERLEAVINGS} interleavings, {packets} packets per round, 0 divergences"))
}

fn handshake_scenario() -> Scenario {
    let link = Link { latency: SimTime::from_millis(5), bandwidth_bps: 10_000_000, loss_prob: 0.0, frag_threshold: 1500 };
    let mut s = pair_scenario("handshake", 1, false, link, 100, SimTime::from_secs(5));
    // The full stack opens the connection and sends; the mote sinks.
    s.apps = vec![
        AppSpec { peer: Some("mote".into()), bytes_total: 100, ..AppSpec::new("host", Role::BulkSender) },
        AppSpec::new("mote", Role::Sink),
    ];
    s.traces = vec![TraceSpec { link: 0, path: "handshake.pcap".into() }];
    s
}

fn np(direction: Direction, flags: TcpFlags, seq: u32, ack: Option<u32>, len: usize) -> NormalizedPacket {
    let src_port_class = if direction == Direction::AtoB { PortClass::Ephemeral } else { PortClass::Fixed };
    NormalizedPacket { direction, proto: Proto::Tcp, tcp_flags: flags, rel_seq: Some(seq), rel_ack: ack, payload_len: len, src_port_class }
}

fn c5_pcap() -> Check {
    let mut header = Vec::new();
    header.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&4u16.to_le_bytes());
    header.extend_from_slice(&0i32.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&65535u32.to_le_bytes());
    header.extend_from_slice(&101u32.to_le_bytes());
    let empty = trace::to_bytes(&[]).map_err(|e| e.to_string())?;
    ensure!(empty == header, "empty trace {empty:02x?} != {header:02x?}");

    let out = run(&handshake_scenario())?;
    let records = &out.traces[0].1;
    let bytes = trace::to_bytes(records).map_err(|e| e.to_string())?;
    let back = trace::parse(&bytes).map_err(|e| e.to_string())?;
    ensure!(&back == records, "round trip changed the records");
    let mut reader = pcap_file::pcap::PcapReader::new(&bytes[..]).map_err(|e| e.to_string())?;
    ensure!(reader.header().datalink == pcap_file::DataLink::RAW, "independent reader sees another linktype");
    let mut n = 0;
    while let Some(pkt) = reader.next_packet() {
        let pkt = pkt.map_err(|e| e.to_string())?;
        let (t, data) = &records[n];
        ensure!(pkt.data.as_ref() == &data[..], "record {n} data differs");
        ensure!(pkt.timestamp.as_micros() as u64 == t.as_micros(), "record {n} timestamp differs");
        n += 1;
    }
    ensure!(n == records.len(), "independent reader saw {n} of {} records", records.len());

    // Active open, one data segment, orderly close initiated by the sender.
    use Direction::*;
    let ack = TcpFlags::ACK;
    let golden = vec![
        np(AtoB, TcpFlags::SYN, 0, None, 0),
        np(BtoA, TcpFlags::SYN | ack, 0, Some(1), 0),
        np(AtoB, ack, 1, Some(1), 0),
        np(AtoB, ack | TcpFlags::PSH, 1, Some(1), 100),
        np(BtoA, ack, 1, Some(101), 0),
        np(AtoB, TcpFlags::FIN | ack, 101, Some(1), 0),
        np(BtoA, TcpFlags::FIN | ack, 1, Some(102), 0),
        np(AtoB, ack, 102, Some(2), 0),
    ];
    let got = trace::normalize(records, Some(Ipv4Addr::new(10, 0, 0, 2))).map_err(|e| e.to_string())?;
    let verdict = trace::compare(&got, &golden);
    ensure!(verdict.is_equal(), "handshake trace: {verdict}");
    Ok(format!("24-byte header, {n} records round-trip and parse independently, handshake golden equal"))
}

/// Straightforward ones-complement sum with end-around carry after every
/// addition, complemented.
fn naive_checksum(data: &[u8]) -> u16 {
    let mut sum: u16 = 0;
    let mut add = |w: u16| {
        let (s, carry) = sum.overflowing_add(w);
        sum = s + carry as u16;
    };
    let mut i = 0;
    while i < data.len() {
        let hi = data[i] as u16;
        let lo = data.get(i + 1).copied().unwrap_or(0) as u16;
        add(hi << 8 | lo);
        i += 2;
    }
    !sum
}

fn naive_packet_ok(p: &[u8]) -> bool {
    if p.len() < 20 || naive_checksum(&p[..20]) != 0 {
        return false;
    }
    let total = u16::from_be_bytes([p[2], p[3]]) as usize;
    let body = &p[20..total];
    let mut pseudo = Vec::with_capacity(12 + body.len());
    pseudo.extend_from_slice(&p[12..20]);
    pseudo.extend_from_slice(&[0, p[9]]);
    pseudo.extend_from_slice(&(body.len() as u16).to_be_bytes());
    pseudo.extend_from_slice(body);
    if p[9] == 17 && body[6..8] == [0, 0] {
        return true;
    }
    naive_checksum(&pseudo) == 0
}

#[derive(Default)]
struct ChecksumObserver {
    packets: u64,
    bad: u64,
}

impl Observer for ChecksumObserver {
    fn node_output(&mut self, _now: SimTime, _node: usize, packet: &[u8]) {
        self.packets += 1;
        if !naive_packet_ok(packet) {
            self.bad += 1;
        }
    }
}

fn c6_checksum() -> Check {
    let mut rng = Rng::new(6);
    for i in 0..CHECKSUM_INPUTS {
        let len = rng.below(1500) as usize;
        let data: Vec<u8> = (0..len).map(|_| rng.next_u32() as u8).collect();
        let (a, b) = (wire::internet_checksum(&data, 0), naive_checksum(&data));
        ensure!(a == b, "input {i} (len {len}): {a:#06x} vs {b:#06x}");
    }
    let mut obs = ChecksumObserver::default();
    for name in ["delayed-ack", "split-hack"] {
        run_scenario_with(&only(name)?, &mut obs).map_err(|e| e.to_string())?;
    }
    ensure!(obs.bad == 0, "{} of {} emitted packets fail the fold check", obs.bad, obs.packets);
    ensure!(obs.packets > 0, "no packets observed");
    Ok(format!("{CHECKSUM_INPUTS} random inputs agree; {} emitted packets fold to zero", obs.packets))
}

fn c7_globalizer_oracle() -> Check {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../globalizer/tests/corpus");
    let files = oracle::corpus(&dir);
    ensure!(files.len() >= MIN_CORPUS_FILES, "corpus has {} files", files.len());
    let config = TransformConfig::default();
    let mut sites = 0;
    for f in &files {
        let src = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        sites += oracle::check_source(&src, &config).map_err(|e| format!("{}: {e}", f.display()))?;
    }
    Ok(format!("{} files, {sites} rewrite sites agree with the scope oracle, output stable", files.len()))
}

fn c8_frag_sweep() -> Check {
    let sweep = preset("frag-sweep").map_err(|e| e.to_string())?;
    ensure!(sweep.len() == FRAG_THRESHOLDS.len(), "{} variants", sweep.len());
    let mut delivered = Vec::new();
    for s in &sweep {
        let f = &run(s)?.flows[0];
        ensure!(f.delivered_intact, "{}: payload corrupted", s.name);
        delivered.push(f.bytes_delivered);
    }
    ensure!(delivered.iter().all(|&d| d == delivered[0] && d > 0), "delivered bytes differ: {delivered:?}");

    let mut worst = 0.0f64;
    for s in &sweep {
        let mut lossy = s.clone();
        lossy.links[0].link.loss_prob = SWEEP_LOSS;
        let out = run(&lossy)?;
        let c = out.links[0];
        let sent = (c.frames_sent[0] + c.frames_sent[1]) as f64;
        let got = (c.frames_delivered[0] + c.frames_delivered[1]) as f64;
        ensure!(sent >= 30.0, "{}: only {sent} frames", s.name);
        let p = 1.0 - SWEEP_LOSS;
        let sigma = (p * (1.0 - p) / sent).sqrt();
        let z = (got / sent - p).abs() / sigma;
        ensure!(z <= PRR_SIGMAS, "{}: PRR {:.4} over {sent} frames is {z:.2} sigma from {p}", s.name, got / sent);
        worst = worst.max(z);
    }
    Ok(format!("{} bytes delivered at every threshold; PRR at loss {SWEEP_LOSS} within {worst:.2} sigma", delivered[0]))
}

fn c9_hetero() -> Check {
    let mut notes = Vec::new();
    for s in preset("hetero-prr").map_err(|e| e.to_string())? {
        let a = run(&s)?;
        let b = run(&s)?;
        ensure!(a.stats_csv() == b.stats_csv(), "{}: reruns differ", s.name);
        let r = report::build(a.flows.clone());
        ensure!(r.variants.len() == 2, "{}: {} variants", s.name, r.variants.len());
        ensure!(r.text().contains("prr="), "report lacks PRR");
        let (va, vb) = (&r.variants[0], &r.variants[1]);
        ensure!(va.variant == "A" && vb.variant == "B", "unexpected variants");
        if s.links[0].link.loss_prob > 0.0 {
            ensure!(
                va.retransmissions != vb.retransmissions,
                "{}: both variants retransmitted {}",
                s.name,
                va.retransmissions
            );
        }
        notes.push(format!("p={} A/B retx {}/{} prr {:.3}/{:.3}", s.links[0].link.loss_prob, va.retransmissions, vb.retransmissions, va.prr(), vb.prr()));
    }
    ensure!(notes.len() == HETERO_LOSS.len(), "missing loss points");
    Ok(notes.join("; "))
}

fn files_in(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        m.insert(name, std::fs::read(&p).map_err(|e| e.to_string())?);
    }
    Ok(m)
}

fn c10_determinism() -> Check {
    let mut scenarios = vec![handshake_scenario()];
    for name in nsc_cli::PRESETS {
        scenarios.extend(preset(name).map_err(|e| e.to_string())?);
    }
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        for s in &scenarios {
            run(s)?.write(d.path()).map_err(|e| e.to_string())?;
        }
    }
    let (a, b) = (files_in(dirs[0].path())?, files_in(dirs[1].path())?);
    ensure!(a.keys().eq(b.keys()), "different file sets");
    for (name, bytes) in &a {
        ensure!(&b[name] == bytes, "{name} differs between runs");
    }
    let pcaps = a.keys().filter(|k| k.ends_with(".pcap")).count();
    let csvs = a.keys().filter(|k| k.ends_with(".csv")).count();
    Ok(format!("{} scenarios: {csvs} CSV and {pcaps} pcap files byte-identical across reruns", scenarios.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("globalizer golden", c1_globalizer_golden),
        ("delayed-ack pathology", c2_delayed_ack),
        ("stop-and-wait invariant", c3_stop_and_wait),
        ("instance isolation", c4_isolation),
        ("pcap bit-exactness", c5_pcap),
        ("checksum oracle", c6_checksum),
        ("globalizer shadowing oracle", c7_globalizer_oracle),
        ("fragmentation sweep", c8_frag_sweep),
        ("heterogeneity scenario", c9_hetero),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = check();
        let dt = t0.elapsed();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{dt:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{dt:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

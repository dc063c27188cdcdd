//! Executes a scenario on the discrete-event engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use nsc_core::cradle::{CradleError, NetstackDrivers, StackId, StackRegistry};
use nsc_core::full::{FullConnStats, FullHandle, FullStack};
use nsc_core::link::{self, Delivery, Fragment, Link, Reassembler};
use nsc_core::rng::Rng;
use nsc_core::sim::{Engine, Event, EventKind, NodeId};
use nsc_core::tcp::TcpState;
use nsc_core::trace::{self, TraceError};
use nsc_core::uip::{ConnHandle, ConnStats, UipError};
use nsc_core::wire;
use nsc_core::SimTime;

use crate::apps::{self, AppState, BlastState, BulkState, EchoState, NodeApp, SinkState, Slot};
use crate::scenario::{node_addr, NodeConfig, Role, Scenario, ScenarioError};

/// How long a partial datagram waits for its missing fragments.
pub const REASSEMBLY_TIMEOUT: SimTime = SimTime::from_secs(30);

/// First line of every stats file.
pub const STATS_VERSION_LINE: &str = "# nsc-stats v1";

pub const STATS_COLUMNS: [&str; 22] = [
    "flow",
    "scenario",
    "variant",
    "src",
    "dst",
    "proto",
    "bytes_acked",
    "bytes_delivered",
    "delivered_intact",
    "completed",
    "timed_out",
    "duration_us",
    "goodput_bps",
    "segments_sent",
    "segments_acked",
    "retransmissions",
    "ctl_retransmissions",
    "outstanding",
    "dropped",
    "frames_sent",
    "frames_delivered",
    "prr",
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("node `{node}`: {msg}")]
    Node { node: String, msg: String },
    #[error("link {link}: {msg}")]
    Link { link: usize, msg: String },
    #[error("trace `{path}`: {source}")]
    Trace { path: String, source: TraceError },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Watches packets as stacks emit and receive them.
pub trait Observer {
    /// A packet originated by `node` (forwarded packets are not reported).
    fn node_output(&mut self, _now: SimTime, _node: usize, _packet: &[u8]) {}

    /// A reassembled packet handed to `node`.
    fn node_input(&mut self, _now: SimTime, _node: usize, _packet: &[u8]) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStats {
    pub flow: String,
    pub scenario: String,
    pub variant: String,
    pub src: String,
    pub dst: String,
    pub proto: &'static str,
    pub bytes_acked: u64,
    pub bytes_delivered: u64,
    pub delivered_intact: bool,
    pub completed: bool,
    pub timed_out: bool,
    pub duration: SimTime,
    pub goodput_bps: f64,
    pub segments_sent: u64,
    pub segments_acked: u64,
    pub retransmissions: u64,
    pub ctl_retransmissions: u64,
    pub outstanding: u64,
    pub dropped: u64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub prr: f64,
}

impl FlowStats {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{},{},{},{},{},{:.6}",
            self.flow,
            self.scenario,
            self.variant,
            self.src,
            self.dst,
            self.proto,
            self.bytes_acked,
            self.bytes_delivered,
            self.delivered_intact,
            self.completed,
            self.timed_out,
            self.duration.as_micros(),
            self.goodput_bps,
            self.segments_sent,
            self.segments_acked,
            self.retransmissions,
            self.ctl_retransmissions,
            self.outstanding,
            self.dropped,
            self.frames_sent,
            self.frames_delivered,
            self.prr,
        )
    }
}

pub fn goodput_bps(bytes: u64, duration: SimTime) -> f64 {
    if duration == SimTime::ZERO {
        return 0.0;
    }
    bytes as f64 * 8.0 * 1e6 / duration.as_micros() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    /// Frames put on the wire, a→b and b→a, whose arrival or loss falls
    /// within the run.
    pub frames_sent: [u64; 2],
    pub frames_delivered: [u64; 2],
    pub reassembly_discards: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: String,
    pub flows: Vec<FlowStats>,
    /// Captured records per `[trace]` entry, with its path.
    pub traces: Vec<(String, Vec<(SimTime, Vec<u8>)>)>,
    pub links: Vec<LinkCounters>,
    /// Hex SHA-256 over the dispatched event log.
    pub digest: String,
    pub dispatched: u64,
    pub no_route_drops: u64,
}

impl RunOutput {
    pub fn stats_csv(&self) -> String {
        let mut s = format!("{STATS_VERSION_LINE}\n{}\n", STATS_COLUMNS.join(","));
        for f in &self.flows {
            s.push_str(&f.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn stats_file_name(&self) -> String {
        format!("{}.stats.csv", self.scenario)
    }

    /// Writes the stats CSV, every trace and the digest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| RunError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        let stats = dir.join(self.stats_file_name());
        std::fs::write(&stats, self.stats_csv()).map_err(io(&stats))?;
        written.push(stats);
        for (path, recs) in &self.traces {
            let p = dir.join(path);
            trace::write_file(&p, recs).map_err(|source| RunError::Trace { path: p.display().to_string(), source })?;
            written.push(p);
        }
        let digest = dir.join(format!("{}.digest", self.scenario));
        std::fs::write(&digest, format!("{}\n", self.digest)).map_err(io(&digest))?;
        written.push(digest);
        Ok(written)
    }
}

#[derive(Debug)]
enum Payload {
    Frame { link: usize, bytes: Vec<u8> },
    Periodic,
    AppStart(usize),
    FullTimer,
    UdpTick(usize),
}

struct LinkRt {
    link: Link,
    ends: [usize; 2],
    busy_until: [SimTime; 2],
    next_id: [u16; 2],
    reasm: [Reassembler; 2],
    rng: Rng,
    counters: LinkCounters,
    captures: Vec<usize>,
}

impl LinkRt {
    /// Direction index of a frame sent by `from`.
    fn dir_from(&self, from: usize) -> usize {
        if from == self.ends[0] {
            0
        } else {
            1
        }
    }
}

enum FullApp {
    Bulk { state: BulkState, handle: Option<FullHandle>, queued: bool },
    Sink { state: SinkState, conns: Vec<FullHandle> },
    Echo { state: EchoState, conns: Vec<FullHandle> },
    Blast(BlastState),
}

struct FullNode {
    stack: FullStack,
    timers: BTreeSet<SimTime>,
    /// Scenario app index per local app.
    apps: BTreeMap<usize, FullApp>,
}

enum NodeRt {
    Uip(StackId),
    Full(Box<FullNode>),
}

struct World<'a> {
    scenario: &'a Scenario,
    registry: StackRegistry<NodeApp>,
    nodes: Vec<NodeRt>,
    links: Vec<LinkRt>,
    addr_index: BTreeMap<Ipv4Addr, usize>,
    next_hop: BTreeMap<(usize, usize), Option<(usize, usize)>>,
    traces: Vec<Vec<(SimTime, Vec<u8>)>>,
    hasher: Sha256,
    error: Option<RunError>,
    no_route_drops: u64,
    observer: &'a mut dyn Observer,
}

fn kind_name(k: EventKind) -> &'static str {
    match k {
        EventKind::FrameArrival => "frame",
        EventKind::PeriodicTimer => "periodic",
        EventKind::AppPoll => "app",
        EventKind::DelayedAckTimer => "timer",
        EventKind::ScenarioAction => "action",
    }
}

pub fn run_scenario(s: &Scenario) -> Result<RunOutput, RunError> {
    run_scenario_with(s, &mut NoObserver)
}

/// Runs `s` to its duration, reporting packets to `observer`.
pub fn run_scenario_with(s: &Scenario, observer: &mut dyn Observer) -> Result<RunOutput, RunError> {
    s.validate()?;
    let mut engine: Engine<Payload> = Engine::new();
    let mut world = World::build(s, observer)?;
    if s.duration > SimTime::ZERO {
        world.schedule_initial(&mut engine)?;
        engine.run_until(s.duration, |eng, ev| world.dispatch(eng, ev));
    }
    if let Some(e) = world.error.take() {
        return Err(e);
    }
    let flows = world.flow_stats(s.duration);
    let World { traces, links, hasher, no_route_drops, .. } = world;
    let digest = hasher.finalize().iter().fold(String::new(), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    });
    Ok(RunOutput {
        scenario: s.name.clone(),
        flows,
        traces: s.traces.iter().map(|t| t.path.clone()).zip(traces).collect(),
        links: links.iter().map(|l| l.counters).collect(),
        digest,
        dispatched: engine.dispatched(),
        no_route_drops,
    })
}

impl<'a> World<'a> {
    fn build(s: &'a Scenario, observer: &'a mut dyn Observer) -> Result<World<'a>, RunError> {
        let uip_count = s.nodes.iter().filter(|n| matches!(n.config, NodeConfig::Uip(_))).count();
        let mut registry = StackRegistry::new(uip_count);
        let mut nodes = Vec::new();
        let mut addr_index = BTreeMap::new();
        for (i, n) in s.nodes.iter().enumerate() {
            let addr = node_addr(i);
            addr_index.insert(addr, i);
            let node_seed = Rng::fork(s.seed ^ 0x5eed_0000_0000_0000, i as u64).next_u64();
            let node_err = |msg: String| RunError::Node { node: n.id.clone(), msg };
            let mut local_apps: Vec<(usize, &crate::scenario::AppSpec)> = Vec::new();
            for (ai, a) in s.apps.iter().enumerate() {
                if a.node == n.id {
                    local_apps.push((ai, a));
                }
            }
            match &n.config {
                NodeConfig::Uip(c) => {
                    let mut app = NodeApp::default();
                    for (ai, a) in &local_apps {
                        let state = match a.role {
                            Role::BulkSender => AppState::Bulk(BulkState { total: a.bytes_total, ..Default::default() }),
                            Role::Sink => AppState::Sink(SinkState::default()),
                            Role::Echo => AppState::Echo(EchoState::default()),
                            Role::UdpBlast => AppState::Blast(BlastState::default()),
                        };
                        app.slots.push(Slot { app: *ai, port: a.port, state });
                    }
                    let id = registry
                        .create_instance(c.clone(), NetstackDrivers::nsc(), addr, app, node_seed)
                        .map_err(|e| node_err(e.to_string()))?;
                    registry
                        .with_instance(id, |inst| -> Result<(), String> {
                            let stack = inst.stack_mut();
                            for (slot, (_, a)) in local_apps.iter().enumerate() {
                                match a.role {
                                    Role::Sink | Role::Echo => {
                                        if c.tcp_enabled {
                                            stack.tcp_listen(a.port).map_err(|e| e.to_string())?;
                                        }
                                        if a.role == Role::Sink && c.udp_enabled {
                                            let h = stack
                                                .udp_new(Ipv4Addr::UNSPECIFIED, 0)
                                                .map_err(|e| e.to_string())?;
                                            stack.udp_bind(h, a.port);
                                            stack.app_mut().bind_udp(h, slot);
                                        }
                                    }
                                    Role::UdpBlast => {
                                        let peer = s.node_index(a.peer.as_deref().unwrap_or_default()).expect("validated");
                                        let h = stack.udp_new(node_addr(peer), a.port).map_err(|e| e.to_string())?;
                                        if let AppState::Blast(b) = &mut stack.app_mut().slots[slot].state {
                                            b.handle = Some(h);
                                        }
                                    }
                                    Role::BulkSender => {}
                                }
                            }
                            Ok(())
                        })
                        .map_err(|e| node_err(e.to_string()))?
                        .map_err(node_err)?;
                    nodes.push(NodeRt::Uip(id));
                }
                NodeConfig::Full(c) => {
                    let mut stack = FullStack::new(c.clone(), addr, node_seed);
                    let mut apps = BTreeMap::new();
                    for (ai, a) in &local_apps {
                        let app = match a.role {
                            Role::BulkSender => FullApp::Bulk {
                                state: BulkState { total: a.bytes_total, ..Default::default() },
                                handle: None,
                                queued: false,
                            },
                            Role::Sink => {
                                stack.listen(a.port);
                                stack.udp_bind(a.port);
                                FullApp::Sink { state: SinkState::default(), conns: Vec::new() }
                            }
                            Role::Echo => {
                                stack.listen(a.port);
                                FullApp::Echo { state: EchoState::default(), conns: Vec::new() }
                            }
                            Role::UdpBlast => FullApp::Blast(BlastState::default()),
                        };
                        apps.insert(*ai, app);
                    }
                    nodes.push(NodeRt::Full(Box::new(FullNode { stack, timers: BTreeSet::new(), apps })));
                }
            }
        }

        let mut links = Vec::new();
        for (li, l) in s.links.iter().enumerate() {
            let a = s.node_index(&l.a).expect("validated");
            let b = s.node_index(&l.b).expect("validated");
            links.push(LinkRt {
                link: l.link.clone(),
                ends: [a, b],
                busy_until: [SimTime::ZERO; 2],
                next_id: [0; 2],
                reasm: [Reassembler::new(REASSEMBLY_TIMEOUT), Reassembler::new(REASSEMBLY_TIMEOUT)],
                rng: Rng::fork(s.seed, li as u64),
                counters: LinkCounters::default(),
                captures: s.traces.iter().enumerate().filter(|(_, t)| t.link == li).map(|(i, _)| i).collect(),
            });
        }

        Ok(World {
            scenario: s,
            registry,
            nodes,
            links,
            addr_index,
            next_hop: BTreeMap::new(),
            traces: vec![Vec::new(); s.traces.len()],
            hasher: Sha256::new(),
            error: None,
            no_route_drops: 0,
            observer,
        })
    }

    fn schedule(&mut self, eng: &mut Engine<Payload>, at: SimTime, node: usize, kind: EventKind, p: Payload) {
        if let Err(e) = eng.schedule(at, NodeId(node), kind, p) {
            self.fail(RunError::Node { node: self.scenario.nodes[node].id.clone(), msg: e.to_string() });
        }
    }

    fn fail(&mut self, e: RunError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn schedule_initial(&mut self, eng: &mut Engine<Payload>) -> Result<(), RunError> {
        for (i, n) in self.scenario.nodes.iter().enumerate() {
            if let NodeConfig::Uip(c) = &n.config {
                self.schedule(eng, c.periodic_interval, i, EventKind::PeriodicTimer, Payload::Periodic);
            }
        }
        for (ai, a) in self.scenario.apps.iter().enumerate() {
            if a.role.is_sender() {
                let node = self.scenario.node_index(&a.node).expect("validated");
                self.schedule(eng, a.start, node, EventKind::AppPoll, Payload::AppStart(ai));
            }
        }
        self.error.take().map_or(Ok(()), Err)
    }

    fn log_event(&mut self, ev: &Event<Payload>) {
        let mut line = format!("{} {} {} {}", ev.time.as_micros(), ev.seq, ev.target.0, kind_name(ev.kind));
        match &ev.payload {
            Payload::Frame { link, bytes } => {
                let _ = write!(line, " link={link} len={}", bytes.len());
                self.hasher.update(line.as_bytes());
                self.hasher.update(bytes);
                self.hasher.update(b"\n");
                return;
            }
            Payload::AppStart(a) | Payload::UdpTick(a) => {
                let _ = write!(line, " app={a}");
            }
            Payload::Periodic | Payload::FullTimer => {}
        }
        line.push('\n');
        self.hasher.update(line.as_bytes());
    }

    fn dispatch(&mut self, eng: &mut Engine<Payload>, ev: Event<Payload>) {
        if self.error.is_some() {
            return;
        }
        self.log_event(&ev);
        let now = ev.time;
        let node = ev.target.0;
        match ev.payload {
            Payload::Frame { link, bytes } => self.frame_arrival(eng, link, node, &bytes, now),
            Payload::Periodic => {
                let NodeRt::Uip(id) = self.nodes[node] else { return };
                self.set_app_clock(id, now);
                let out = self.registry.tick(id, now);
                self.uip_output(eng, node, out, now);
                if let NodeConfig::Uip(c) = &self.scenario.nodes[node].config {
                    let next = now.saturating_add(c.periodic_interval);
                    self.schedule(eng, next, node, EventKind::PeriodicTimer, Payload::Periodic);
                }
            }
            Payload::AppStart(ai) => self.start_app(eng, node, ai, now),
            Payload::UdpTick(ai) => self.udp_tick(eng, node, ai, now),
            Payload::FullTimer => {
                let NodeRt::Full(f) = &mut self.nodes[node] else { return };
                f.timers.remove(&now);
                let out = f.stack.on_timer(now);
                self.full_output(eng, node, out, now);
            }
        }
    }

    fn set_app_clock(&self, id: StackId, now: SimTime) {
        let _ = self.registry.with_instance(id, |inst| inst.stack_mut().app_mut().now = now);
    }

    fn start_app(&mut self, eng: &mut Engine<Payload>, node: usize, ai: usize, now: SimTime) {
        let s = self.scenario;
        let a = &s.apps[ai];
        let peer = s.node_index(a.peer.as_deref().unwrap_or_default()).expect("validated");
        let dst = node_addr(peer);
        if a.role == Role::UdpBlast {
            self.udp_tick(eng, node, ai, now);
            return;
        }
        match &mut self.nodes[node] {
            NodeRt::Uip(id) => {
                let id = *id;
                let opened = self.registry.with_instance(id, |inst| {
                    let stack = inst.stack_mut();
                    stack.app_mut().now = now;
                    let h = stack.tcp_connect(dst, a.port)?;
                    let app = stack.app_mut();
                    let slot = app.slot_of_app(ai).expect("app slot");
                    app.bind_conn(h, slot);
                    if let AppState::Bulk(b) = &mut app.slots[slot].state {
                        b.handle = Some(h);
                    }
                    Ok::<ConnHandle, UipError>(h)
                });
                match opened {
                    Ok(Ok(h)) => {
                        let out = self.registry.poll(id, h, now);
                        self.uip_output(eng, node, out, now);
                    }
                    Ok(Err(e)) => self.fail(RunError::Node { node: a.node.clone(), msg: e.to_string() }),
                    Err(e) => self.fail(RunError::Node { node: a.node.clone(), msg: e.to_string() }),
                }
            }
            NodeRt::Full(f) => {
                let (h, out) = f.stack.connect(dst, a.port, now);
                if let Some(FullApp::Bulk { handle, .. }) = f.apps.get_mut(&ai) {
                    *handle = Some(h);
                }
                self.full_output(eng, node, out, now);
            }
        }
    }

    fn udp_tick(&mut self, eng: &mut Engine<Payload>, node: usize, ai: usize, now: SimTime) {
        let s = self.scenario;
        let a = &s.apps[ai];
        let peer = s.node_index(a.peer.as_deref().unwrap_or_default()).expect("validated");
        let mut more = false;
        match &mut self.nodes[node] {
            NodeRt::Uip(id) => {
                let id = *id;
                let sent = self.registry.with_instance(id, |inst| -> Result<Vec<Vec<u8>>, UipError> {
                    let stack = inst.stack_mut();
                    let slot = stack.app().slot_of_app(ai).expect("app slot");
                    let AppState::Blast(b) = &stack.app().slots[slot].state else { return Ok(Vec::new()) };
                    let (handle, offset) = (b.handle.expect("bound at build"), b.sent);
                    let n = (a.bytes_total - offset).min(a.payload as u64) as usize;
                    let out = stack.udp_send(handle, &apps::pattern(offset, n))?;
                    if let AppState::Blast(b) = &mut stack.app_mut().slots[slot].state {
                        b.sent += n as u64;
                        b.datagrams += 1;
                        more = b.sent < a.bytes_total;
                    }
                    Ok(inst.emit(out))
                });
                match sent {
                    Ok(Ok(out)) => self.uip_output(eng, node, Ok(out), now),
                    Ok(Err(e)) => self.fail(RunError::Node { node: a.node.clone(), msg: e.to_string() }),
                    Err(e) => self.fail(RunError::Node { node: a.node.clone(), msg: e.to_string() }),
                }
            }
            NodeRt::Full(f) => {
                let Some(FullApp::Blast(b)) = f.apps.get_mut(&ai) else { return };
                let n = (a.bytes_total - b.sent).min(a.payload as u64) as usize;
                let pkt = f.stack.udp_send(a.port, node_addr(peer), a.port, &apps::pattern(b.sent, n));
                b.sent += n as u64;
                b.datagrams += 1;
                more = b.sent < a.bytes_total;
                self.full_output(eng, node, vec![pkt], now);
            }
        }
        if more {
            let next = now.saturating_add(a.interval);
            self.schedule(eng, next, node, EventKind::ScenarioAction, Payload::UdpTick(ai));
        }
    }

    fn uip_output(&mut self, eng: &mut Engine<Payload>, node: usize, out: Result<Vec<Vec<u8>>, CradleError>, now: SimTime) {
        match out {
            Ok(pkts) => {
                for p in pkts {
                    self.observer.node_output(now, node, &p);
                    self.route(eng, node, p, now);
                }
            }
            Err(CradleError::FrameTooLargeForPacketbuf { .. }) => {}
            Err(e) => self.fail(RunError::Node { node: self.scenario.nodes[node].id.clone(), msg: e.to_string() }),
        }
    }

    /// Routes the packets a full node emitted, then runs its applications.
    fn full_output(&mut self, eng: &mut Engine<Payload>, node: usize, out: Vec<Vec<u8>>, now: SimTime) {
        for p in out {
            self.observer.node_output(now, node, &p);
            self.route(eng, node, p, now);
        }
        let more = self.service_full(node, now);
        if !more.is_empty() {
            self.full_output(eng, node, more, now);
            return;
        }
        let NodeRt::Full(f) = &mut self.nodes[node] else { return };
        if let Some(t) = f.stack.next_deadline() {
            let t = if t <= now { now.saturating_add(SimTime::from_micros(1)) } else { t };
            if f.timers.insert(t) {
                self.schedule(eng, t, node, EventKind::DelayedAckTimer, Payload::FullTimer);
            }
        }
    }

    /// Lets the applications of a full node react to received data and
    /// connection progress; returns packets they caused.
    fn service_full(&mut self, node: usize, now: SimTime) -> Vec<Vec<u8>> {
        let NodeRt::Full(f) = &mut self.nodes[node] else { return Vec::new() };
        let FullNode { stack, apps, .. } = f.as_mut();
        let mut out = Vec::new();
        for h in stack.take_accepted() {
            let port = stack.connection(h).map(|c| c.local_port);
            for (ai, app) in apps.iter_mut() {
                if Some(self.scenario.apps[*ai].port) != port {
                    continue;
                }
                match app {
                    FullApp::Sink { conns, .. } | FullApp::Echo { conns, .. } => conns.push(h),
                    _ => {}
                }
            }
        }
        for d in stack.take_udp() {
            for (ai, app) in apps.iter_mut() {
                if let FullApp::Sink { state, .. } = app {
                    if self.scenario.apps[*ai].port == d.dst_port {
                        state.absorb_datagram(&d.payload);
                    }
                }
            }
        }
        for app in apps.values_mut() {
            match app {
                FullApp::Sink { state, conns } => {
                    for h in conns.iter() {
                        let data = stack.take_received(*h);
                        if !data.is_empty() {
                            state.absorb(h.0, &data);
                        }
                    }
                }
                FullApp::Echo { state, conns } => {
                    for h in conns.iter() {
                        let data = stack.take_received(*h);
                        if !data.is_empty() {
                            state.bytes += data.len() as u64;
                            out.extend(stack.send(*h, &data, now));
                        }
                    }
                }
                FullApp::Bulk { state, handle: Some(h), queued } => {
                    let Some(c) = stack.connection(*h) else { continue };
                    let (st, acked) = (c.state, c.stats.bytes_acked);
                    if !*queued && st == TcpState::Established {
                        *queued = true;
                        state.sent = state.total;
                        out.extend(stack.send(*h, &apps::pattern(0, state.total as usize), now));
                    }
                    if acked >= state.total && state.done_at.is_none() {
                        state.done_at = Some(now);
                    }
                    if state.done_at.is_some() && !state.close_requested {
                        state.close_requested = true;
                        out.extend(stack.close(*h, now));
                    }
                }
                FullApp::Bulk { .. } | FullApp::Blast(_) => {}
            }
        }
        out
    }

    fn next_hop(&mut self, from: usize, to: usize) -> Option<(usize, usize)> {
        if let Some(h) = self.next_hop.get(&(from, to)) {
            return *h;
        }
        let hop = self.scenario.route(from, to).and_then(|r| r.first().copied());
        self.next_hop.insert((from, to), hop);
        hop
    }

    fn route(&mut self, eng: &mut Engine<Payload>, from: usize, packet: Vec<u8>, now: SimTime) {
        let to = wire::peek_dst(&packet).and_then(|d| self.addr_index.get(&d).copied());
        let hop = to.filter(|&t| t != from).and_then(|t| self.next_hop(from, t));
        match hop {
            Some((li, next)) => self.transmit(eng, li, from, next, packet, now),
            None => self.no_route_drops += 1,
        }
    }

    /// Fragments `packet` and puts the frames on link `li`.
    fn transmit(&mut self, eng: &mut Engine<Payload>, li: usize, from: usize, to: usize, packet: Vec<u8>, now: SimTime) {
        let l = &mut self.links[li];
        let dir = l.dir_from(from);
        for &t in &l.captures {
            self.traces[t].push((now, packet.clone()));
        }
        let id = l.next_id[dir];
        l.next_id[dir] = id.wrapping_add(1);
        let frags = match link::fragment(&packet, l.link.frag_threshold, id) {
            Ok(f) => f,
            Err(e) => {
                self.fail(RunError::Link { link: li, msg: e.to_string() });
                return;
            }
        };
        let mut arrivals = Vec::new();
        for frag in frags {
            let bytes = frag.encode();
            let depart = now.max(l.busy_until[dir]);
            l.busy_until[dir] = depart.saturating_add(l.link.serialization_time(bytes.len()));
            match link::link_transmit(&l.link, &bytes, depart, &mut l.rng) {
                Ok(Delivery::Arrives(t)) => arrivals.push((t, bytes)),
                Ok(Delivery::Dropped) => {
                    let due = l.busy_until[dir].saturating_add(l.link.latency);
                    if due <= self.scenario.duration {
                        l.counters.frames_sent[dir] += 1;
                    }
                }
                Err(e) => {
                    self.fail(RunError::Link { link: li, msg: e.to_string() });
                    return;
                }
            }
        }
        for (t, bytes) in arrivals {
            self.schedule(eng, t, to, EventKind::FrameArrival, Payload::Frame { link: li, bytes });
        }
    }

    fn frame_arrival(&mut self, eng: &mut Engine<Payload>, li: usize, node: usize, frame: &[u8], now: SimTime) {
        let l = &mut self.links[li];
        let dir = 1 - l.dir_from(node);
        l.counters.frames_sent[dir] += 1;
        l.counters.frames_delivered[dir] += 1;
        let Ok(frag) = Fragment::decode(frame) else {
            l.counters.reassembly_discards += 1;
            return;
        };
        let before = l.reasm[dir].discarded();
        let done = l.reasm[dir].push(frag, now);
        l.counters.reassembly_discards += l.reasm[dir].discarded() - before;
        if let Some(packet) = done {
            self.deliver(eng, node, packet, now);
        }
    }

    fn deliver(&mut self, eng: &mut Engine<Payload>, node: usize, mut packet: Vec<u8>, now: SimTime) {
        let own = node_addr(node);
        match &mut self.nodes[node] {
            NodeRt::Uip(id) => {
                let id = *id;
                self.observer.node_input(now, node, &packet);
                self.set_app_clock(id, now);
                let out = self.registry.inject_frame(id, &packet, now);
                self.uip_output(eng, node, out, now);
            }
            NodeRt::Full(f) => {
                if wire::peek_dst(&packet).is_some_and(|d| d != own) {
                    if wire::decrement_ttl(&mut packet) {
                        self.route(eng, node, packet, now);
                    }
                    return;
                }
                self.observer.node_input(now, node, &packet);
                let out = f.stack.input(&packet, now);
                self.full_output(eng, node, out, now);
            }
        }
    }

    fn first_link(&mut self, src: usize, dst: usize) -> Option<usize> {
        self.next_hop(src, dst).map(|(li, _)| li)
    }

    fn sink_bytes(&self, node: usize, port: u16) -> (u64, bool) {
        let mut total = (0, true);
        for (ai, a) in self.scenario.apps.iter().enumerate() {
            if a.role != Role::Sink || a.port != port || self.scenario.node_index(&a.node) != Some(node) {
                continue;
            }
            let state = match &self.nodes[node] {
                NodeRt::Uip(id) => self
                    .registry
                    .with_instance(*id, |inst| {
                        let app = inst.stack().app();
                        app.slot_of_app(ai).and_then(|s| match &app.slots[s].state {
                            AppState::Sink(st) => Some((st.bytes, st.intact)),
                            _ => None,
                        })
                    })
                    .ok()
                    .flatten(),
                NodeRt::Full(f) => match f.apps.get(&ai) {
                    Some(FullApp::Sink { state, .. }) => Some((state.bytes, state.intact)),
                    _ => None,
                },
            };
            if let Some((b, ok)) = state {
                total = (total.0 + b, total.1 && ok);
            }
        }
        total
    }

    fn flow_stats(&mut self, end: SimTime) -> Vec<FlowStats> {
        let s = self.scenario;
        let mut flows = Vec::new();
        for (ai, a) in s.apps.iter().enumerate() {
            if !a.role.is_sender() || a.start > end || end == SimTime::ZERO {
                continue;
            }
            let node = s.node_index(&a.node).expect("validated");
            let peer_id = a.peer.clone().unwrap_or_default();
            let peer = s.node_index(&peer_id).expect("validated");
            let (bytes_delivered, intact) = self.sink_bytes(peer, a.port);
            let mut fs = FlowStats {
                flow: format!("{}->{}:{}", a.node, peer_id, a.port),
                scenario: s.name.clone(),
                variant: s.nodes[node].label.clone().unwrap_or_else(|| "-".into()),
                src: a.node.clone(),
                dst: peer_id,
                proto: if a.role == Role::UdpBlast { "udp" } else { "tcp" },
                bytes_acked: 0,
                bytes_delivered,
                delivered_intact: intact,
                completed: false,
                timed_out: false,
                duration: SimTime::ZERO,
                goodput_bps: 0.0,
                segments_sent: 0,
                segments_acked: 0,
                retransmissions: 0,
                ctl_retransmissions: 0,
                outstanding: 0,
                dropped: 0,
                frames_sent: 0,
                frames_delivered: 0,
                prr: f64::NAN,
            };
            let mut done_at = None;
            match (&self.nodes[node], a.role) {
                (NodeRt::Uip(id), Role::BulkSender) => {
                    let got = self.registry.with_instance(*id, |inst| {
                        let stack = inst.stack();
                        let slot = stack.app().slot_of_app(ai)?;
                        let AppState::Bulk(b) = &stack.app().slots[slot].state else { return None };
                        let stats = b
                            .final_stats
                            .clone()
                            .or_else(|| b.handle.and_then(|h| stack.connection(h)).map(|c| c.stats.clone()));
                        Some((stats.unwrap_or_default(), b.done_at))
                    });
                    if let Ok(Some((st, d))) = got {
                        apply_uip(&mut fs, &st);
                        done_at = d;
                    }
                }
                (NodeRt::Full(f), Role::BulkSender) => {
                    if let Some(FullApp::Bulk { state, handle, .. }) = f.apps.get(&ai) {
                        if let Some(c) = handle.and_then(|h| f.stack.connection(h)) {
                            apply_full(&mut fs, &c.stats);
                        }
                        done_at = state.done_at;
                    }
                }
                (n, Role::UdpBlast) => {
                    let blast = match n {
                        NodeRt::Uip(id) => self
                            .registry
                            .with_instance(*id, |inst| {
                                let app = inst.stack().app();
                                app.slot_of_app(ai).and_then(|s| match &app.slots[s].state {
                                    AppState::Blast(b) => Some(b.clone()),
                                    _ => None,
                                })
                            })
                            .ok()
                            .flatten(),
                        NodeRt::Full(f) => match f.apps.get(&ai) {
                            Some(FullApp::Blast(b)) => Some(b.clone()),
                            _ => None,
                        },
                    };
                    let b = blast.unwrap_or_default();
                    // Datagrams are never acknowledged: the sink's count
                    // stands in for the acked bytes.
                    fs.bytes_acked = bytes_delivered;
                    fs.segments_sent = b.datagrams;
                    fs.completed = b.sent >= a.bytes_total;
                }
                _ => {}
            }
            fs.completed |= done_at.is_some();
            fs.duration = done_at.unwrap_or(end).saturating_sub(a.start);
            fs.goodput_bps = goodput_bps(fs.bytes_acked, fs.duration);
            if let Some(li) = self.first_link(node, peer) {
                let c = self.links[li].counters;
                fs.frames_sent = c.frames_sent[0] + c.frames_sent[1];
                fs.frames_delivered = c.frames_delivered[0] + c.frames_delivered[1];
                if fs.frames_sent > 0 {
                    fs.prr = fs.frames_delivered as f64 / fs.frames_sent as f64;
                }
            }
            flows.push(fs);
        }
        flows
    }
}

fn apply_uip(fs: &mut FlowStats, st: &ConnStats) {
    fs.bytes_acked = st.bytes_acked;
    fs.segments_sent = st.segments_sent;
    fs.segments_acked = st.segments_acked;
    fs.retransmissions = st.retransmissions;
    fs.ctl_retransmissions = st.ctl_retransmissions;
    fs.outstanding = st.outstanding;
    fs.dropped = st.dropped;
    fs.timed_out = st.timed_out;
}

fn apply_full(fs: &mut FlowStats, st: &FullConnStats) {
    fs.bytes_acked = st.bytes_acked;
    fs.segments_sent = st.segments_sent;
    fs.segments_acked = st.segments_acked;
    fs.retransmissions = st.retransmissions;
    fs.ctl_retransmissions = st.ctl_retransmissions;
    fs.outstanding = st.outstanding;
    fs.dropped = st.dropped;
    fs.timed_out = st.timed_out;
}

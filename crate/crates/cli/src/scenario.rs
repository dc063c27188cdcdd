//! Line-oriented scenario files.
//!
//! ```text
//! name = demo
//! seed = 7
//! duration = 10s
//!
//! [node]
//! id = mote
//! stack = uip
//! buffer_size = 400
//!
//! [node]
//! id = host
//! stack = full
//!
//! [link]
//! a = mote
//! b = host
//! latency = 5ms
//! bandwidth_bps = 250000
//!
//! [app]
//! node = mote
//! role = bulk_sender
//! peer = host
//! bytes_total = 10000
//!
//! [app]
//! node = host
//! role = sink
//!
//! [trace]
//! link = 0
//! path = demo.pcap
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Durations take a
//! `us`, `ms` or `s` suffix; a bare number is microseconds.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use nsc_core::full::FullTcpConfig;
use nsc_core::link::Link;
use nsc_core::time::MAX_MICROS;
use nsc_core::uip::UipConfig;
use nsc_core::SimTime;

pub const STACK_KINDS: [&str; 2] = ["uip", "full"];
pub const ROLES: [&str; 4] = ["bulk_sender", "sink", "echo", "udp_blast"];
pub const MAX_NODES: usize = 250;
pub const DEFAULT_PORT: u16 = 80;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: field `{field}`: {msg}")]
    Parse { line: usize, field: String, msg: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn parse_err(line: usize, field: &str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, field: field.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeConfig {
    Uip(UipConfig),
    Full(FullTcpConfig),
}

impl NodeConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeConfig::Uip(_) => "uip",
            NodeConfig::Full(_) => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    /// Free-form variant tag copied into the stats.
    pub label: Option<String>,
    pub config: NodeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub link: Link,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    BulkSender,
    Sink,
    Echo,
    UdpBlast,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::BulkSender => "bulk_sender",
            Role::Sink => "sink",
            Role::Echo => "echo",
            Role::UdpBlast => "udp_blast",
        }
    }

    pub fn is_sender(self) -> bool {
        matches!(self, Role::BulkSender | Role::UdpBlast)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppSpec {
    pub node: String,
    pub role: Role,
    pub peer: Option<String>,
    pub port: u16,
    pub bytes_total: u64,
    pub start: SimTime,
    /// Gap between datagrams of a `udp_blast`.
    pub interval: SimTime,
    /// Datagram payload size of a `udp_blast`.
    pub payload: usize,
}

impl AppSpec {
    pub fn new(node: &str, role: Role) -> AppSpec {
        AppSpec {
            node: node.to_string(),
            role,
            peer: None,
            port: DEFAULT_PORT,
            bytes_total: 0,
            start: SimTime::ZERO,
            interval: SimTime::from_millis(100),
            payload: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    /// Index into `Scenario::links`.
    pub link: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: SimTime,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub apps: Vec<AppSpec>,
    pub traces: Vec<TraceSpec>,
}

pub fn default_link() -> Link {
    Link { latency: SimTime::from_millis(5), bandwidth_bps: 250_000, loss_prob: 0.0, frag_threshold: 127 }
}

/// Address of the node at `index` in the node list.
pub fn node_addr(index: usize) -> Ipv4Addr {
    Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 0, 0, 1)) + index as u32)
}

pub fn parse_duration(s: &str) -> Result<SimTime, String> {
    let s = s.trim();
    let (num, mult) = if let Some(n) = s.strip_suffix("us") {
        (n, 1)
    } else if let Some(n) = s.strip_suffix("ms") {
        (n, 1_000)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1_000_000)
    } else {
        (s, 1)
    };
    let v: u64 = num.trim().parse().map_err(|_| format!("`{s}` is not a duration"))?;
    let us = v.checked_mul(mult).filter(|&us| us <= MAX_MICROS).ok_or_else(|| format!("`{s}` is out of range"))?;
    Ok(SimTime::from_micros(us))
}

pub fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("`{s}` is not a boolean")),
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

/// Key/value pairs of one section, consumed field by field.
struct Section {
    kind: String,
    line: usize,
    entries: VecDeque<Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        let i = self.entries.iter().position(|e| e.key == key)?;
        self.entries.remove(i)
    }

    fn required(&mut self, key: &str) -> Result<Entry, ScenarioError> {
        self.take(key)
            .ok_or_else(|| parse_err(self.line, key, format!("[{}] section is missing `{key}`", self.kind)))
    }

    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, ScenarioError> {
        match self.take(key) {
            Some(e) => parse(&e.value).map(Some).map_err(|m| parse_err(e.line, key, m)),
            None => Ok(None),
        }
    }

    fn set<T>(&mut self, key: &str, slot: &mut T, parse: impl Fn(&str) -> Result<T, String>) -> Result<(), ScenarioError> {
        if let Some(v) = self.get(key, parse)? {
            *slot = v;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(), ScenarioError> {
        match self.entries.pop_front() {
            Some(e) => Err(parse_err(e.line, &e.key, format!("unknown key in [{}] section", self.kind))),
            None => Ok(()),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not a valid number"))
}

fn nonempty(s: &str) -> Result<String, String> {
    if s.is_empty() {
        Err("empty value".into())
    } else {
        Ok(s.to_string())
    }
}

fn periods(s: &str) -> Result<u16, String> {
    num(s)
}

fn uip_config(sec: &mut Section) -> Result<UipConfig, ScenarioError> {
    let mut c = UipConfig::default();
    sec.set("max_connections", &mut c.max_connections, num)?;
    sec.set("max_listen_ports", &mut c.max_listen_ports, num)?;
    sec.set("udp_connections", &mut c.udp_connections, num)?;
    sec.set("buffer_size", &mut c.buffer_size, num)?;
    sec.set("packetbuf_size", &mut c.packetbuf_size, num)?;
    sec.set("tcp", &mut c.tcp_enabled, parse_bool)?;
    sec.set("udp", &mut c.udp_enabled, parse_bool)?;
    sec.set("udp_checksums", &mut c.udp_checksums, parse_bool)?;
    sec.set("tcp_split", &mut c.tcp_split, parse_bool)?;
    sec.set("periodic_interval", &mut c.periodic_interval, parse_duration)?;
    sec.set("max_retransmissions", &mut c.max_retransmissions, num)?;
    sec.set("initial_rto", &mut c.initial_rto, periods)?;
    sec.set("time_wait_periods", &mut c.time_wait_periods, periods)?;
    Ok(c)
}

fn full_config(sec: &mut Section) -> Result<FullTcpConfig, ScenarioError> {
    let mut c = FullTcpConfig::default();
    sec.set("recv_window", &mut c.recv_window, num)?;
    sec.set("delayed_ack_timeout", &mut c.delayed_ack_timeout, parse_duration)?;
    sec.set("ack_every_n", &mut c.ack_every_n, num)?;
    sec.set("initial_rto", &mut c.initial_rto, parse_duration)?;
    sec.set("max_rto", &mut c.max_rto, parse_duration)?;
    sec.set("mss", &mut c.mss, num)?;
    sec.set("max_retransmissions", &mut c.max_retransmissions, num)?;
    sec.set("time_wait", &mut c.time_wait, parse_duration)?;
    sec.set("reorder_capacity", &mut c.reorder_capacity, num)?;
    Ok(c)
}

fn node_section(mut sec: Section) -> Result<NodeSpec, ScenarioError> {
    let id = sec.required("id")?;
    let stack = sec.required("stack")?;
    let label = sec.get("label", nonempty)?;
    let config = match stack.value.as_str() {
        "uip" => NodeConfig::Uip(uip_config(&mut sec)?),
        "full" => NodeConfig::Full(full_config(&mut sec)?),
        other => {
            return Err(ScenarioError::Validation(format!(
                "node `{}`: unknown stack kind `{other}` (line {}); allowed kinds: {}",
                id.value,
                stack.line,
                STACK_KINDS.join(", ")
            )))
        }
    };
    sec.finish()?;
    Ok(NodeSpec { id: id.value, label, config })
}

fn link_section(mut sec: Section) -> Result<LinkSpec, ScenarioError> {
    let a = sec.required("a")?.value;
    let b = sec.required("b")?.value;
    let mut link = default_link();
    sec.set("latency", &mut link.latency, parse_duration)?;
    sec.set("bandwidth_bps", &mut link.bandwidth_bps, num)?;
    sec.set("loss_prob", &mut link.loss_prob, num)?;
    sec.set("frag_threshold", &mut link.frag_threshold, num)?;
    sec.finish()?;
    Ok(LinkSpec { a, b, link })
}

fn app_section(mut sec: Section) -> Result<AppSpec, ScenarioError> {
    let node = sec.required("node")?.value;
    let role = sec.required("role")?;
    let role_kind = match role.value.as_str() {
        "bulk_sender" => Role::BulkSender,
        "sink" => Role::Sink,
        "echo" => Role::Echo,
        "udp_blast" => Role::UdpBlast,
        other => {
            return Err(parse_err(role.line, "role", format!("unknown role `{other}`; allowed: {}", ROLES.join(", "))))
        }
    };
    let mut app = AppSpec::new(&node, role_kind);
    app.peer = sec.get("peer", nonempty)?;
    sec.set("port", &mut app.port, num)?;
    sec.set("bytes_total", &mut app.bytes_total, num)?;
    sec.set("start", &mut app.start, parse_duration)?;
    sec.set("interval", &mut app.interval, parse_duration)?;
    sec.set("payload", &mut app.payload, num)?;
    sec.finish()?;
    Ok(app)
}

fn trace_section(mut sec: Section) -> Result<TraceSpec, ScenarioError> {
    let link = sec.required("link")?;
    let link_idx = num(&link.value).map_err(|m| parse_err(link.line, "link", m))?;
    let path = sec.required("path")?.value;
    sec.finish()?;
    Ok(TraceSpec { link: link_idx, path })
}

impl Scenario {
    pub fn empty(name: &str) -> Scenario {
        Scenario {
            name: name.to_string(),
            seed: 1,
            duration: SimTime::from_secs(10),
            nodes: Vec::new(),
            links: Vec::new(),
            apps: Vec::new(),
            traces: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let mut s = Scenario::parse(&text)?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    /// Parses and validates scenario text.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario::empty("");
        let mut top = Section { kind: "top-level".into(), line: 0, entries: VecDeque::new() };
        let mut sections: Vec<Section> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if let Some(kind) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                if !["node", "link", "app", "trace"].contains(&kind) {
                    return Err(parse_err(line, kind, "unknown section"));
                }
                sections.push(Section { kind: kind.to_string(), line, entries: VecDeque::new() });
                continue;
            }
            let Some((k, v)) = l.split_once('=') else {
                return Err(parse_err(line, l, "expected `key = value`"));
            };
            let entry = Entry { line, key: k.trim().to_string(), value: v.trim().to_string() };
            let target = sections.last_mut().unwrap_or(&mut top);
            if target.entries.iter().any(|e| e.key == entry.key) {
                return Err(parse_err(line, &entry.key, "duplicate key"));
            }
            target.entries.push_back(entry);
        }

        top.set("name", &mut s.name, nonempty)?;
        top.set("seed", &mut s.seed, num)?;
        top.set("duration", &mut s.duration, parse_duration)?;
        top.finish()?;

        for sec in sections {
            match sec.kind.as_str() {
                "node" => s.nodes.push(node_section(sec)?),
                "link" => s.links.push(link_section(sec)?),
                "app" => s.apps.push(app_section(sec)?),
                _ => s.traces.push(trace_section(sec)?),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Checks every cross-reference and every stack and link invariant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Validation(m));
        if self.duration.as_micros() > MAX_MICROS {
            return bad("duration exceeds 2^62 us".into());
        }
        if self.nodes.len() > MAX_NODES {
            return bad(format!("{} nodes exceed the limit of {MAX_NODES}", self.nodes.len()));
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.is_empty() || n.id.contains(char::is_whitespace) {
                return bad(format!("node id `{}` must be a non-empty word", n.id));
            }
            if !ids.insert(n.id.as_str()) {
                return bad(format!("node ids must be unique: `{}` appears twice", n.id));
            }
            let checked = match &n.config {
                NodeConfig::Uip(c) => c.validate().map_err(|e| e.to_string()),
                NodeConfig::Full(c) => c.validate().map_err(|e| e.to_string()),
            };
            if let Err(e) = checked {
                return bad(format!("node `{}`: {e}", n.id));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            for end in [&l.a, &l.b] {
                if !ids.contains(end.as_str()) {
                    return bad(format!("link {i}: endpoint `{end}` is not a node"));
                }
            }
            if l.a == l.b {
                return bad(format!("link {i}: both endpoints are `{}`", l.a));
            }
            if let Err(e) = l.link.validate() {
                return bad(format!("link {i}: {e}"));
            }
            if l.link.frag_threshold > u16::MAX as usize {
                return bad(format!("link {i}: frag_threshold {} exceeds 65535", l.link.frag_threshold));
            }
        }
        let mut listeners = BTreeSet::new();
        for (i, a) in self.apps.iter().enumerate() {
            let Some(node) = self.node_index(&a.node) else {
                return bad(format!("app {i}: node `{}` does not exist", a.node));
            };
            if a.role.is_sender() {
                let Some(peer) = &a.peer else {
                    return bad(format!("app {i}: role {} needs a peer", a.role.name()));
                };
                let Some(p) = self.node_index(peer) else {
                    return bad(format!("app {i}: peer `{peer}` does not exist"));
                };
                if p == node {
                    return bad(format!("app {i}: peer is the app's own node"));
                }
                if self.route(node, p).is_none() {
                    return bad(format!("app {i}: no route from `{}` to `{peer}`", a.node));
                }
                if a.bytes_total == 0 {
                    return bad(format!("app {i}: bytes_total must be positive"));
                }
            } else if !listeners.insert((node, a.port)) {
                return bad(format!("app {i}: port {} on `{}` already has a listener", a.port, a.node));
            }
            if a.role == Role::UdpBlast {
                if a.interval == SimTime::ZERO {
                    return bad(format!("app {i}: interval must be positive"));
                }
                if a.payload == 0 || a.payload > 65_000 {
                    return bad(format!("app {i}: payload must be within 1..=65000 bytes"));
                }
                if let NodeConfig::Uip(c) = &self.nodes[node].config {
                    if a.payload + 28 > c.buffer_size {
                        return bad(format!(
                            "app {i}: UDP payload {} does not fit the {}-byte buffer of `{}`",
                            a.payload, c.buffer_size, a.node
                        ));
                    }
                }
            }
        }
        let mut paths = BTreeSet::new();
        for (i, t) in self.traces.iter().enumerate() {
            if t.link >= self.links.len() {
                return bad(format!("trace {i}: link index {} out of range ({} links)", t.link, self.links.len()));
            }
            if t.path.is_empty() || !paths.insert(t.path.as_str()) {
                return bad(format!("trace {i}: path `{}` is empty or used twice", t.path));
            }
        }
        Ok(())
    }

    /// Shortest path from node `from` to node `to` as a list of
    /// (link index, next node) hops.
    pub fn route(&self, from: usize, to: usize) -> Option<Vec<(usize, usize)>> {
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.nodes.len()];
        for (li, l) in self.links.iter().enumerate() {
            let (Some(&a), Some(&b)) = (index.get(l.a.as_str()), index.get(l.b.as_str())) else {
                continue;
            };
            adj[a].push((li, b));
            adj[b].push((li, a));
        }
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(n) = queue.pop_front() {
            if n == to {
                let mut hops = Vec::new();
                let mut at = to;
                while at != from {
                    let (li, p) = prev[at].expect("visited");
                    hops.push((li, at));
                    at = p;
                }
                hops.reverse();
                return Some(hops);
            }
            for &(li, m) in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    prev[m] = Some((li, n));
                    queue.push_back(m);
                }
            }
        }
        None
    }
}

fn fmt_time(t: SimTime) -> String {
    format!("{}us", t.as_micros())
}

impl fmt::Display for Scenario {
    /// Canonical text form; `Scenario::parse` reads it back unchanged.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.name.is_empty() {
            writeln!(f, "name = {}", self.name)?;
        }
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "duration = {}", fmt_time(self.duration))?;
        for n in &self.nodes {
            writeln!(f, "\n[node]\nid = {}\nstack = {}", n.id, n.config.kind())?;
            if let Some(l) = &n.label {
                writeln!(f, "label = {l}")?;
            }
            match &n.config {
                NodeConfig::Uip(c) => {
                    writeln!(f, "max_connections = {}", c.max_connections)?;
                    writeln!(f, "max_listen_ports = {}", c.max_listen_ports)?;
                    writeln!(f, "udp_connections = {}", c.udp_connections)?;
                    writeln!(f, "buffer_size = {}", c.buffer_size)?;
                    writeln!(f, "packetbuf_size = {}", c.packetbuf_size)?;
                    writeln!(f, "tcp = {}", c.tcp_enabled)?;
                    writeln!(f, "udp = {}", c.udp_enabled)?;
                    writeln!(f, "udp_checksums = {}", c.udp_checksums)?;
                    writeln!(f, "tcp_split = {}", c.tcp_split)?;
                    writeln!(f, "periodic_interval = {}", fmt_time(c.periodic_interval))?;
                    writeln!(f, "max_retransmissions = {}", c.max_retransmissions)?;
                    writeln!(f, "initial_rto = {}", c.initial_rto)?;
                    writeln!(f, "time_wait_periods = {}", c.time_wait_periods)?;
                }
                NodeConfig::Full(c) => {
                    writeln!(f, "recv_window = {}", c.recv_window)?;
                    writeln!(f, "delayed_ack_timeout = {}", fmt_time(c.delayed_ack_timeout))?;
                    writeln!(f, "ack_every_n = {}", c.ack_every_n)?;
                    writeln!(f, "initial_rto = {}", fmt_time(c.initial_rto))?;
                    writeln!(f, "max_rto = {}", fmt_time(c.max_rto))?;
                    writeln!(f, "mss = {}", c.mss)?;
                    writeln!(f, "max_retransmissions = {}", c.max_retransmissions)?;
                    writeln!(f, "time_wait = {}", fmt_time(c.time_wait))?;
                    writeln!(f, "reorder_capacity = {}", c.reorder_capacity)?;
                }
            }
        }
        for l in &self.links {
            writeln!(f, "\n[link]\na = {}\nb = {}", l.a, l.b)?;
            writeln!(f, "latency = {}", fmt_time(l.link.latency))?;
            writeln!(f, "bandwidth_bps = {}", l.link.bandwidth_bps)?;
            writeln!(f, "loss_prob = {}", l.link.loss_prob)?;
            writeln!(f, "frag_threshold = {}", l.link.frag_threshold)?;
        }
        for a in &self.apps {
            writeln!(f, "\n[app]\nnode = {}\nrole = {}", a.node, a.role.name())?;
            if let Some(p) = &a.peer {
                writeln!(f, "peer = {p}")?;
            }
            writeln!(f, "port = {}", a.port)?;
            writeln!(f, "bytes_total = {}", a.bytes_total)?;
            writeln!(f, "start = {}", fmt_time(a.start))?;
            writeln!(f, "interval = {}", fmt_time(a.interval))?;
            writeln!(f, "payload = {}", a.payload)?;
        }
        for t in &self.traces {
            writeln!(f, "\n[trace]\nlink = {}\npath = {}", t.link, t.path)?;
        }
        Ok(())
    }
}

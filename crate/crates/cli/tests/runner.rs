use nsc_cli::{preset, run_scenario, RunError, Scenario, ScenarioError};
use nsc_core::SimTime;
use proptest::prelude::*;

const PAIR: &str = "name = pair
seed = 7
duration = 20s

[node]
id = mote
stack = uip

[node]
id = host
stack = full

[link]
a = mote
b = host
latency = 20ms
bandwidth_bps = 250000
frag_threshold = 127

[app]
node = mote
role = bulk_sender
peer = host
bytes_total = 2000

[app]
node = host
role = sink

[trace]
link = 0
path = pair.pcap
";

fn pair() -> Scenario {
    Scenario::parse(PAIR).unwrap()
}

#[test]
fn scenario_file_loads_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.scenario");
    std::fs::write(&path, PAIR).unwrap();
    let s = Scenario::load(&path).unwrap();
    assert_eq!((s.name.as_str(), s.seed, s.nodes.len(), s.apps.len()), ("pair", 7, 2, 2));
    assert_eq!(Scenario::parse(&s.to_string()).unwrap().to_string(), s.to_string());
}

#[test]
fn missing_scenario_file_is_reported() {
    assert!(matches!(Scenario::load("/nonexistent/x.scenario"), Err(ScenarioError::Io { .. })));
}

#[test]
fn pair_delivers_payload() {
    let out = run_scenario(&pair()).unwrap();
    let f = &out.flows[0];
    assert!(f.completed && f.delivered_intact && !f.timed_out);
    assert_eq!((f.bytes_acked, f.bytes_delivered), (2000, 2000));
    assert!(f.goodput_bps > 0.0);
}

#[test]
fn zero_duration_dispatches_nothing() {
    let mut s = pair();
    s.duration = SimTime::ZERO;
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.dispatched, 0);
    assert!(out.flows.is_empty());
    assert!(out.links.iter().all(|c| c.frames_sent == [0, 0]));
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let pcap = std::fs::read(dir.path().join("pair.pcap")).unwrap();
    assert_eq!(pcap.len(), 24);
    assert!(nsc_core::trace::parse(&pcap).unwrap().is_empty());
}

#[test]
fn total_loss_times_out() {
    let mut s = pair();
    s.links[0].link.loss_prob = 1.0;
    s.duration = SimTime::from_secs(120);
    let f = &run_scenario(&s).unwrap().flows[0];
    assert!(f.timed_out && !f.completed);
    assert_eq!(f.ctl_retransmissions, nsc_core::uip::UipConfig::default().max_retransmissions as u64);
    assert_eq!((f.bytes_delivered, f.frames_delivered), (0, 0));
    assert_eq!(f.prr, 0.0);
}

#[test]
fn same_seed_same_bytes() {
    let mut s = pair();
    s.links[0].link.loss_prob = 0.2;
    let (a, b) = (run_scenario(&s).unwrap(), run_scenario(&s).unwrap());
    assert_eq!(a.stats_csv(), b.stats_csv());
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.traces, b.traces);
    s.seed += 1;
    assert_ne!(run_scenario(&s).unwrap().digest, a.digest);
}

#[test]
fn invalid_scenario_is_rejected_before_running() {
    let mut s = pair();
    s.links[0].link.loss_prob = 1.5;
    assert!(matches!(run_scenario(&s), Err(RunError::Scenario(_))));
    let err = Scenario::parse(&PAIR.replace("stack = full", "stack = lwip")).unwrap_err();
    assert!(err.to_string().contains("lwip"), "{err}");
}

#[test]
fn presets_are_named() {
    for name in nsc_cli::PRESETS {
        assert!(!preset(name).unwrap().is_empty());
    }
    assert!(preset("nope").is_err());
}

#[test]
fn stats_csv_has_version_and_header() {
    let csv = run_scenario(&pair()).unwrap().stats_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(nsc_cli::runner::STATS_VERSION_LINE));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header, nsc_cli::runner::STATS_COLUMNS);
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), header.len());
    let rows = nsc_cli::report::parse_stats("pair.stats.csv", &csv).unwrap();
    assert_eq!(rows.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn segment_accounting_is_conserved(
        seed in any::<u64>(),
        loss in 0.0f64..0.4,
        latency_ms in 1u64..80,
        split in any::<bool>(),
        bytes in 1u64..3000,
    ) {
        let mut s = pair();
        s.seed = seed;
        s.links[0].link.loss_prob = loss;
        s.links[0].link.latency = SimTime::from_millis(latency_ms);
        s.apps[0].bytes_total = bytes;
        if let nsc_cli::scenario::NodeConfig::Uip(c) = &mut s.nodes[0].config {
            c.tcp_split = split;
        }
        let out = run_scenario(&s).unwrap();
        let f = &out.flows[0];
        prop_assert_eq!(f.segments_sent, f.segments_acked + f.retransmissions + f.outstanding + f.dropped);
        prop_assert!(f.bytes_delivered <= bytes && f.bytes_acked <= bytes);
        prop_assert!(f.delivered_intact);
        prop_assert!(f.frames_delivered <= f.frames_sent);
        prop_assert!(f.completed != f.timed_out || !f.completed);
        let c = out.links[0];
        prop_assert!(c.frames_delivered[0] <= c.frames_sent[0] && c.frames_delivered[1] <= c.frames_sent[1]);
    }
}

//! Comparison tables over stats files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use nsc_core::SimTime;

use crate::runner::{FlowStats, STATS_COLUMNS, STATS_VERSION_LINE};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{file}:{line}: schema mismatch: {msg}")]
    SchemaMismatch { file: String, line: usize, msg: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no stats files given")]
    NoInput,
}

fn mismatch(file: &str, line: usize, msg: impl Into<String>) -> ReportError {
    ReportError::SchemaMismatch { file: file.to_string(), line, msg: msg.into() }
}

/// Parses a stats CSV written by the runner.
pub fn parse_stats(file: &str, text: &str) -> Result<Vec<FlowStats>, ReportError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == STATS_VERSION_LINE => {}
        _ => return Err(mismatch(file, 1, format!("expected `{STATS_VERSION_LINE}`"))),
    }
    let header = STATS_COLUMNS.join(",");
    match lines.next() {
        Some((_, l)) if l == header => {}
        _ => return Err(mismatch(file, 2, "unexpected column header")),
    }
    let mut rows = Vec::new();
    for (n, l) in lines {
        if l.is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != STATS_COLUMNS.len() {
            return Err(mismatch(file, n, format!("{} fields, expected {}", f.len(), STATS_COLUMNS.len())));
        }
        let int = |i: usize| f[i].parse::<u64>().map_err(|_| mismatch(file, n, format!("bad {}", STATS_COLUMNS[i])));
        let float = |i: usize| f[i].parse::<f64>().map_err(|_| mismatch(file, n, format!("bad {}", STATS_COLUMNS[i])));
        let boolean =
            |i: usize| f[i].parse::<bool>().map_err(|_| mismatch(file, n, format!("bad {}", STATS_COLUMNS[i])));
        let proto = match f[5] {
            "tcp" => "tcp",
            "udp" => "udp",
            _ => return Err(mismatch(file, n, "bad proto")),
        };
        rows.push(FlowStats {
            flow: f[0].into(),
            scenario: f[1].into(),
            variant: f[2].into(),
            src: f[3].into(),
            dst: f[4].into(),
            proto,
            bytes_acked: int(6)?,
            bytes_delivered: int(7)?,
            delivered_intact: boolean(8)?,
            completed: boolean(9)?,
            timed_out: boolean(10)?,
            duration: SimTime::from_micros(int(11)?),
            goodput_bps: float(12)?,
            segments_sent: int(13)?,
            segments_acked: int(14)?,
            retransmissions: int(15)?,
            ctl_retransmissions: int(16)?,
            outstanding: int(17)?,
            dropped: int(18)?,
            frames_sent: int(19)?,
            frames_delivered: int(20)?,
            prr: float(21)?,
        });
    }
    Ok(rows)
}

pub fn read_stats(paths: &[String]) -> Result<Vec<FlowStats>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInput);
    }
    let mut rows = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|source| ReportError::Io { path: p.clone(), source })?;
        rows.extend(parse_stats(p, &text)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub scenario: String,
    pub variant: String,
    pub flows: usize,
    pub retransmissions: u64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub mean_goodput_bps: f64,
}

impl VariantSummary {
    pub fn prr(&self) -> f64 {
        if self.frames_sent == 0 {
            f64::NAN
        } else {
            self.frames_delivered as f64 / self.frames_sent as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub flows: Vec<FlowStats>,
    pub variants: Vec<VariantSummary>,
    /// Split-hack goodput over delayed-ack goodput, when both are present.
    pub split_ratio: Option<f64>,
}

fn total_goodput(rows: &[FlowStats], scenario: &str) -> Option<f64> {
    let g: Vec<f64> = rows.iter().filter(|r| r.scenario == scenario).map(|r| r.goodput_bps).collect();
    (!g.is_empty()).then(|| g.iter().sum())
}

pub fn build(flows: Vec<FlowStats>) -> Report {
    let mut groups: BTreeMap<(String, String), Vec<&FlowStats>> = BTreeMap::new();
    for f in &flows {
        groups.entry((f.scenario.clone(), f.variant.clone())).or_default().push(f);
    }
    let variants = groups
        .into_iter()
        .map(|((scenario, variant), rows)| VariantSummary {
            scenario,
            variant,
            flows: rows.len(),
            retransmissions: rows.iter().map(|r| r.retransmissions).sum(),
            frames_sent: rows.iter().map(|r| r.frames_sent).sum(),
            frames_delivered: rows.iter().map(|r| r.frames_delivered).sum(),
            mean_goodput_bps: rows.iter().map(|r| r.goodput_bps).sum::<f64>() / rows.len() as f64,
        })
        .collect();
    let split_ratio = match (total_goodput(&flows, "delayed-ack"), total_goodput(&flows, "split-hack")) {
        (Some(d), Some(s)) if d > 0.0 => Some(s / d),
        _ => None,
    };
    Report { flows, variants, split_ratio }
}

impl Report {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:<22} {:<8} {:>14} {:>8} {:>9} {:>10}",
            "flow", "scenario", "variant", "goodput_bps", "retx", "prr", "delivered"
        );
        for f in &self.flows {
            let _ = writeln!(
                s,
                "{:<28} {:<22} {:<8} {:>14.1} {:>8} {:>9.4} {:>10}",
                f.flow, f.scenario, f.variant, f.goodput_bps, f.retransmissions, f.prr, f.bytes_delivered
            );
        }
        let _ = writeln!(s, "\nper variant:");
        for v in &self.variants {
            let _ = writeln!(
                s,
                "{:<22} {:<8} flows={} retx={} prr={:.4} mean_goodput_bps={:.1}",
                v.scenario,
                v.variant,
                v.flows,
                v.retransmissions,
                v.prr(),
                v.mean_goodput_bps
            );
        }
        if let Some(r) = self.split_ratio {
            let _ = writeln!(s, "\nratio split-hack/delayed-ack goodput: {r:.2}");
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("scenario,variant,flows,retransmissions,frames_sent,frames_delivered,prr,mean_goodput_bps\n");
        for v in &self.variants {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.3}",
                v.scenario,
                v.variant,
                v.flows,
                v.retransmissions,
                v.frames_sent,
                v.frames_delivered,
                v.prr(),
                v.mean_goodput_bps
            );
        }
        if let Some(r) = self.split_ratio {
            let _ = writeln!(s, "ratio,split-hack/delayed-ack,,,,,,{r:.3}");
        }
        s
    }
}

//! Result records and their JSON and CSV forms.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use xcommit_core::metrics::{
    audit_acid, check_latency_bound, check_message_bound, summarize_latencies, AuditReport, DerivedBounds,
    LatencySummary, TxnMetrics,
};
use xcommit_core::config::RunConfig;
use xcommit_core::protocol::ProtocolKind;
use xcommit_core::time::{Dur, Time};
use xcommit_core::trace::{Outcome, RunTrace};

use crate::config_file::config_digest;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub submitted: u64,
    pub committed: u64,
    pub aborted: u64,
    pub unfinished: u64,
    /// From the first submission to the last completion, in seconds.
    pub span_s: f64,
    /// Committed transactions per second over the span.
    pub throughput_tps: f64,
    pub latency: LatencySummary,
    pub protocol_messages: u64,
    pub heartbeat_idle: u64,
    pub heartbeat_attributed: u64,
    /// Idle heartbeat messages relative to protocol messages.
    pub heartbeat_overhead: f64,
    pub recycles: u64,
    pub crashes: u64,
    pub crashes_refused: u64,
    pub forks: u64,
    /// Mean over chains of window size / delta in steady state, when sampled.
    pub window_tps: Option<f64>,
    pub events: u64,
    pub event_digest: String,
    pub quiescent: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundCounts {
    pub message_checked: u64,
    pub message_violations: u64,
    /// Latency is checked for committed SBP transactions only.
    pub latency_checked: u64,
    pub latency_violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_digest: String,
    pub config: RunConfig,
    pub summary: Summary,
    pub audit: AuditReport,
    pub bounds: BoundCounts,
    pub txns: Vec<TxnMetrics>,
}

impl ResultRecord {
    pub fn from_trace(config: &RunConfig, trace: &RunTrace) -> ResultRecord {
        let audit = audit_acid(trace);
        let bounds = check_bounds(trace);
        ResultRecord {
            config_digest: config_digest(config),
            config: config.clone(),
            summary: summarize(trace),
            audit,
            bounds,
            txns: trace.txns.iter().map(|t| t.metrics.clone()).collect(),
        }
    }

    /// All audits and bound checks passed.
    pub fn pass(&self) -> bool {
        self.audit.pass() && self.bounds.message_violations == 0 && self.bounds.latency_violations == 0
    }

    pub fn rows(&self) -> Vec<TxnRow> {
        self.txns.iter().map(TxnRow::from).collect()
    }
}

pub fn check_bounds(trace: &RunTrace) -> BoundCounts {
    let mut b = BoundCounts::default();
    for t in &trace.txns {
        let own = t.request.chains();
        let bounds = DerivedBounds::from_chains(
            trace.chains.iter().filter(|c| own.contains(&c.params.chain) || involved_host(trace, c.params.chain)).map(|c| &c.params),
        );
        b.message_checked += 1;
        if check_message_bound(&t.metrics, &bounds).is_err() {
            b.message_violations += 1;
        }
        if trace.protocol == ProtocolKind::Sbp && t.outcome == Outcome::Committed {
            b.latency_checked += 1;
            if check_latency_bound(&t.metrics, &bounds, trace.tau_max, trace.recovery).is_err() {
                b.latency_violations += 1;
            }
        }
    }
    b
}

/// Under HUB the hub chain takes part in every transaction.
fn involved_host(trace: &RunTrace, chain: xcommit_core::chain::ChainId) -> bool {
    trace.protocol == ProtocolKind::Hub && chain.0 == 1
}

/// Mean of `size / delta` over samples taken once the window has filled
/// (after the first delta) and before the last arrival.
pub fn steady_window_rate(trace: &RunTrace) -> Option<f64> {
    let last_arrival = trace.txns.iter().map(|t| t.request.submit_time).max()?;
    let mut total = 0.0;
    let mut n = 0u64;
    for s in &trace.window_samples {
        let delta = trace.chain(s.chain)?.params.delta;
        if s.at >= Time::ZERO + delta && s.at <= last_arrival {
            total += s.size as f64 / delta.as_secs_f64();
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

pub fn summarize(trace: &RunTrace) -> Summary {
    let mut s = Summary {
        submitted: trace.txns.len() as u64,
        events: trace.events_processed,
        event_digest: format!("{:016x}", trace.event_digest),
        quiescent: trace.quiescent,
        heartbeat_idle: trace.heartbeat_idle,
        heartbeat_attributed: trace.heartbeat_attributed,
        crashes: trace.crashes.len() as u64,
        crashes_refused: trace.crashes_refused as u64,
        forks: trace.chains.iter().map(|c| c.forks as u64).sum(),
        window_tps: steady_window_rate(trace),
        ..Summary::default()
    };
    let mut latencies = Vec::new();
    let mut first = Time::MAX;
    let mut last = Time::ZERO;
    for t in &trace.txns {
        match t.outcome {
            Outcome::Committed => s.committed += 1,
            Outcome::Aborted => s.aborted += 1,
            Outcome::Unfinished => s.unfinished += 1,
        }
        first = first.min(t.metrics.submit);
        if let Some(end) = t.metrics.commit.or(t.metrics.abort) {
            last = last.max(end);
        }
        if let Some(l) = t.metrics.latency() {
            latencies.push(l.as_millis_f64());
        }
        s.protocol_messages += t.metrics.messages_total;
        s.recycles += t.metrics.recycle_count as u64;
    }
    if last > first {
        s.span_s = (last - first).as_secs_f64();
        s.throughput_tps = s.committed as f64 / s.span_s;
    }
    if s.protocol_messages > 0 {
        s.heartbeat_overhead = s.heartbeat_idle as f64 / s.protocol_messages as f64;
    }
    s.latency = summarize_latencies(latencies);
    s
}

/// One CSV row per transaction. Column order is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxnRow {
    pub uuid: u64,
    pub protocol: String,
    /// Empty when the transaction did not commit.
    pub latency_ms: Option<f64>,
    pub messages: u64,
    pub lambda1: u32,
    pub lambda2: u32,
    pub recycles: u32,
    pub committed: bool,
}

impl From<&TxnMetrics> for TxnRow {
    fn from(m: &TxnMetrics) -> TxnRow {
        TxnRow {
            uuid: m.uuid.0,
            protocol: m.protocol.as_str().to_string(),
            latency_ms: m.latency().map(Dur::as_millis_f64),
            messages: m.messages_total,
            lambda1: m.lambda1,
            lambda2: m.lambda2,
            recycles: m.recycle_count,
            committed: m.committed(),
        }
    }
}

pub const CSV_HEADER: [&str; 8] =
    ["uuid", "protocol", "latency_ms", "messages", "lambda1", "lambda2", "recycles", "committed"];

pub fn write_csv<W: Write>(rows: &[TxnRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> csv::Result<Vec<TxnRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn to_json(record: &ResultRecord) -> serde_json::Result<String> {
    serde_json::to_string_pretty(record)
}

pub fn from_json(text: &str) -> serde_json::Result<ResultRecord> {
    serde_json::from_str(text)
}

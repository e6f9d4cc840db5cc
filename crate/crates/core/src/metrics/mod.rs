//! Per-transaction measurements, the message and latency bounds, and the
//! Poisson failure estimate.

pub mod audit;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::TxnId;
use crate::node::ChainParams;
use crate::protocol::{Phase, ProtocolKind, SlidingWindow};
use crate::time::{Dur, Time};

pub use audit::{audit_acid, AuditReport, Verdict, Violation};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnMetrics {
    pub uuid: TxnId,
    pub protocol: ProtocolKind,
    pub submit: Time,
    /// First time the transaction was marked completed.
    pub commit: Option<Time>,
    pub abort: Option<Time>,
    /// Every message attributed to this transaction, all executions.
    pub messages_total: u64,
    pub messages_phase1: u64,
    pub messages_phase2: u64,
    /// Messages per protocol execution; a recycled transaction runs again.
    pub messages_by_execution: Vec<u64>,
    pub lambda1: u32,
    pub lambda2: u32,
    pub recycle_count: u32,
    /// Nodes across the chains the transaction touches.
    pub nodes: u32,
    pub chains: u32,
}

impl TxnMetrics {
    pub fn new(uuid: TxnId, protocol: ProtocolKind, submit: Time) -> TxnMetrics {
        TxnMetrics {
            uuid,
            protocol,
            submit,
            commit: None,
            abort: None,
            messages_total: 0,
            messages_phase1: 0,
            messages_phase2: 0,
            messages_by_execution: alloc::vec![0],
            lambda1: 0,
            lambda2: 0,
            recycle_count: 0,
            nodes: 0,
            chains: 0,
        }
    }

    pub fn count(&mut self, phase: Phase, n: u64) {
        self.messages_total += n;
        match phase {
            Phase::One => self.messages_phase1 += n,
            Phase::Two => self.messages_phase2 += n,
        }
        *self.messages_by_execution.last_mut().expect("at least one execution") += n;
    }

    pub fn failures(&self) -> u32 {
        self.lambda1 + self.lambda2
    }

    pub fn latency(&self) -> Option<Dur> {
        self.commit.map(|c| c - self.submit)
    }

    pub fn committed(&self) -> bool {
        self.commit.is_some()
    }

    /// Largest message count of a single execution.
    pub fn max_execution_messages(&self) -> u64 {
        self.messages_by_execution.iter().copied().max().unwrap_or(0)
    }
}

/// Suprema and infima over a set of chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedBounds {
    pub delta_max: Dur,
    pub delta_min: Dur,
    pub sigma_max: Dur,
    pub total_nodes: u32,
    pub n_chains: u32,
    /// Allowance for waiting on the next block slot.
    pub sched_slack: Dur,
}

impl DerivedBounds {
    pub fn from_chains<'a>(chains: impl IntoIterator<Item = &'a ChainParams>) -> DerivedBounds {
        let mut b = DerivedBounds {
            delta_max: Dur::ZERO,
            delta_min: Dur(u64::MAX),
            sigma_max: Dur::ZERO,
            total_nodes: 0,
            n_chains: 0,
            sched_slack: Dur::ZERO,
        };
        for p in chains {
            b.delta_max = b.delta_max.max(p.delta);
            b.delta_min = b.delta_min.min(p.delta);
            b.sigma_max = b.sigma_max.max(p.sigma);
            b.total_nodes += p.n_nodes;
            b.n_chains += 1;
            b.sched_slack = b.sched_slack.max(p.block_interval * 2);
        }
        if b.n_chains == 0 {
            b.delta_min = Dur::ZERO;
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{what} bound violated for {txn}: observed {observed}, limit {limit}")]
pub struct BoundViolated {
    pub txn: TxnId,
    pub what: BoundKind,
    pub observed: u64,
    pub limit: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    Messages,
    /// Latency, in microseconds.
    Latency,
}

impl core::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            BoundKind::Messages => "message",
            BoundKind::Latency => "latency",
        })
    }
}

/// `4 * max(1, failures) * |N|`.
pub fn message_limit(t: &TxnMetrics, b: &DerivedBounds) -> u64 {
    4 * t.failures().max(1) as u64 * b.total_nodes as u64
}

/// Each protocol execution of the transaction stays within
/// `4 * max(1, failures) * |N|` messages.
pub fn check_message_bound(t: &TxnMetrics, b: &DerivedBounds) -> Result<(), BoundViolated> {
    let limit = message_limit(t, b);
    let observed = t.max_execution_messages();
    if observed > limit {
        return Err(BoundViolated { txn: t.uuid, what: BoundKind::Messages, observed, limit });
    }
    Ok(())
}

/// `4 * tau_max + max(1, failures) * (f + delta_max) + slack`.
pub fn latency_limit(t: &TxnMetrics, b: &DerivedBounds, tau_max: Dur, recovery: Dur) -> Dur {
    let per_failure = recovery + b.delta_max;
    tau_max * 4 + per_failure * t.failures().max(1) as u64 + b.sched_slack
}

/// Only meaningful for committed transactions; others pass.
pub fn check_latency_bound(
    t: &TxnMetrics,
    b: &DerivedBounds,
    tau_max: Dur,
    recovery: Dur,
) -> Result<(), BoundViolated> {
    let Some(latency) = t.latency() else { return Ok(()) };
    let limit = latency_limit(t, b, tau_max, recovery);
    if latency > limit {
        return Err(BoundViolated {
            txn: t.uuid,
            what: BoundKind::Latency,
            observed: latency.as_micros(),
            limit: limit.as_micros(),
        });
    }
    Ok(())
}

/// Probability of exactly `k` failures when `rate` are expected:
/// `rate^k e^-rate / k!`, in log space for large `k`.
pub fn poisson_failure_prob(rate: f64, k: u32) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k <= 20 {
        let mut p = libm::exp(-rate);
        for i in 1..=k {
            p *= rate / i as f64;
        }
        p
    } else {
        let kf = k as f64;
        libm::exp(kf * libm::log(rate) - rate - libm::lgamma(kf + 1.0))
    }
}

/// Window-based throughput estimate in transactions per second.
pub fn throughput(window: &SlidingWindow, delta: Dur) -> f64 {
    window.throughput(delta)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = libm::ceil(q * sorted.len() as f64) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize_latencies(mut values_ms: Vec<f64>) -> LatencySummary {
    if values_ms.is_empty() {
        return LatencySummary::default();
    }
    values_ms.sort_by(|a, b| a.total_cmp(b));
    LatencySummary {
        count: values_ms.len() as u64,
        min_ms: values_ms[0],
        median_ms: percentile(&values_ms, 0.5),
        p99_ms: percentile(&values_ms, 0.99),
        max_ms: values_ms[values_ms.len() - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainId;

    fn chain(i: u32, nodes: u32) -> ChainParams {
        ChainParams {
            chain: ChainId(i),
            n_nodes: nodes,
            delta: Dur::from_secs(10),
            sigma: Dur::from_millis(100),
            block_interval: Dur::from_millis(1),
            fork_prob: 0.0,
            max_fork_depth: 1,
        }
    }

    #[test]
    fn civil_sbp_message_example() {
        let chains = [chain(1, 3), chain(2, 3), chain(3, 3)];
        let b = DerivedBounds::from_chains(chains.iter());
        assert_eq!(b.total_nodes, 9);
        // Phase one: two PRECOMMIT + two READY envelopes, two replicated
        // locks per chain.
        let phase1 = 2 * (3 - 1) + (9 - 3);
        let mut t = TxnMetrics::new(TxnId(1), ProtocolKind::Sbp, Time::ZERO);
        t.count(Phase::One, phase1 as u64);
        t.count(Phase::Two, 10);
        assert_eq!(t.messages_phase1, 10);
        assert_eq!(message_limit(&t, &b), 36);
        assert!(check_message_bound(&t, &b).is_ok());
        t.count(Phase::Two, 17);
        assert!(check_message_bound(&t, &b).is_err());
    }

    #[test]
    fn latency_limit_examples() {
        let chains = [chain(1, 3), chain(2, 3)];
        let b = DerivedBounds::from_chains(chains.iter());
        let mut t = TxnMetrics::new(TxnId(1), ProtocolKind::Sbp, Time::ZERO);
        t.commit = Some(Time::from_millis(10_200));
        let tau = Dur::from_millis(50);
        let f = Dur::from_secs(3);
        assert_eq!(latency_limit(&t, &b, tau, f), Dur::from_millis(200 + 13_000 + 2));
        assert!(check_latency_bound(&t, &b, tau, f).is_ok());
        t.commit = Some(Time::from_millis(13_203));
        assert!(check_latency_bound(&t, &b, tau, f).is_err());
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_failure_prob(0.0, 0), 1.0);
        assert_eq!(poisson_failure_prob(0.0, 3), 0.0);
        assert!((poisson_failure_prob(1.0, 0) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!((poisson_failure_prob(2.0, 2) - 0.270_670_566_473_225_4).abs() < 1e-15);
    }

    #[test]
    fn percentiles() {
        let s = summarize_latencies(alloc::vec![5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!((s.min_ms, s.median_ms, s.max_ms), (1.0, 3.0, 5.0));
        assert_eq!(s.p99_ms, 5.0);
        assert_eq!(summarize_latencies(alloc::vec![]).count, 0);
    }
}

//! Immutable record of a finished run, the input of every auditor.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, NodeId, TransactionRequest, TxnId};
use crate::metrics::TxnMetrics;
use crate::node::ChainParams;
use crate::protocol::{CoordPhase, MsgKind, PartPhase, ProtocolKind};
use crate::time::{Dur, Time};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub params: ChainParams,
    pub initial_balances: Vec<u64>,
    pub final_balances: Vec<u64>,
    /// Transactions on the final main branch with the index of their block.
    pub main_txns: Vec<(TxnId, u64)>,
    pub height: u64,
    pub finalized_height: Option<u64>,
    pub blocks: u64,
    pub forks: u32,
    pub proxy_epoch: u64,
    /// Entity locks still held when the run stopped.
    pub locks_held: u32,
}

impl ChainSummary {
    pub fn main_index_of(&self, txn: TxnId) -> Option<u64> {
        self.main_txns
            .binary_search_by_key(&txn, |(t, _)| *t)
            .ok()
            .map(|i| self.main_txns[i].1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Committed,
    Aborted,
    /// The run stopped before the transaction reached a terminal state.
    Unfinished,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegTrace {
    pub chain: ChainId,
    pub phase: PartPhase,
    /// When the leg's balance change was applied.
    pub applied_at: Option<Time>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnTrace {
    pub request: TransactionRequest,
    pub outcome: Outcome,
    pub coordinator_phase: Option<CoordPhase>,
    pub metrics: TxnMetrics,
    /// Recycles requested after the coordinator had marked completion.
    pub recycled_after_commit: u32,
    pub legs: Vec<LegTrace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockViolation {
    pub txn: TxnId,
    pub chain: ChainId,
    pub holder: TxnId,
    pub at: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub node: NodeId,
    pub at: Time,
    pub recover_at: Time,
    pub was_proxy: bool,
    /// When a replacement proxy took over, if one did.
    pub replaced_at: Option<Time>,
    pub affected: Vec<TxnId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSample {
    pub at: Time,
    pub chain: ChainId,
    pub size: u32,
}

/// Protocol inputs that a state machine rejected for reasons other than a
/// stale incarnation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub txn: TxnId,
    pub chain: ChainId,
    pub at: Time,
    pub code: u8,
}

/// A protocol message handled by its destination chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub at: Time,
    pub msg_id: u64,
    pub from: NodeId,
    pub to: NodeId,
    /// Proxy that handled it, which differs from `to` after a failover.
    pub handled_by: NodeId,
    pub kind: MsgKind,
    pub txn: TxnId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub end_time: Time,
    pub events_processed: u64,
    /// FNV-1a digest of every processed event in order.
    pub event_digest: u64,
    pub quiescent: bool,
    /// Largest sampled one-way latency.
    pub tau_max: Dur,
    pub recovery: Dur,
    pub chains: Vec<ChainSummary>,
    pub txns: Vec<TxnTrace>,
    pub lock_violations: Vec<LockViolation>,
    pub anomalies: Vec<Anomaly>,
    /// Heartbeat messages not attributable to any blocked transaction.
    pub heartbeat_idle: u64,
    pub heartbeat_attributed: u64,
    pub crashes: Vec<CrashRecord>,
    pub crashes_refused: u32,
    pub window_samples: Vec<WindowSample>,
    /// Only filled when delivery recording was switched on.
    pub deliveries: Vec<DeliveryRecord>,
}

impl RunTrace {
    pub fn chain(&self, id: ChainId) -> Option<&ChainSummary> {
        self.chains.iter().find(|c| c.params.chain == id)
    }

    pub fn committed(&self) -> impl Iterator<Item = &TxnTrace> {
        self.txns.iter().filter(|t| t.outcome == Outcome::Committed)
    }

    /// Protocol messages over all transactions, all executions.
    pub fn protocol_messages(&self) -> u64 {
        self.txns.iter().map(|t| t.metrics.messages_total).sum()
    }
}

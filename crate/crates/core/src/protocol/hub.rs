//! Admission control of the hub chain: every transaction is forwarded there
//! and coordinated by the hub, at most `capacity` at a time.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HubEffect {
    /// Start coordinating this transaction on the hub.
    Start(TxnId),
    /// Tell the requester how the transaction ended.
    Ack { to: ChainId, txn: TxnId, committed: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubState {
    pub hub: ChainId,
    pub capacity: usize,
    active: BTreeMap<TxnId, ChainId>,
    queue: VecDeque<(TxnId, ChainId)>,
    seen: BTreeSet<TxnId>,
}

impl HubState {
    pub fn new(hub: ChainId, capacity: usize) -> HubState {
        HubState {
            hub,
            capacity: capacity.max(1),
            active: BTreeMap::new(),
            queue: VecDeque::new(),
            seen: BTreeSet::new(),
        }
    }

    /// A forwarded request reached the hub. Duplicates are ignored.
    pub fn forward(&mut self, txn: TxnId, requester: ChainId) -> Vec<HubEffect> {
        if !self.seen.insert(txn) {
            return Vec::new();
        }
        if self.active.len() < self.capacity {
            self.active.insert(txn, requester);
            alloc::vec![HubEffect::Start(txn)]
        } else {
            self.queue.push_back((txn, requester));
            Vec::new()
        }
    }

    /// The hub's coordinator reached a terminal state for `txn`.
    pub fn finished(&mut self, txn: TxnId, committed: bool) -> Vec<HubEffect> {
        let mut out = Vec::new();
        if let Some(to) = self.active.remove(&txn) {
            out.push(HubEffect::Ack { to, txn, committed });
            if let Some((next, requester)) = self.queue.pop_front() {
                self.active.insert(next, requester);
                out.push(HubEffect::Start(next));
            }
        }
        out
    }

    pub fn active(&self) -> usize {
        self.active.len()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty() && self.queue.is_empty()
    }
}

//! FIFO of transactions waiting to (re)enter the commit protocol.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::chain::{TransactionRequest, TxnId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledRequest {
    pub request: TransactionRequest,
    pub recycle_count: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestPool {
    queue: VecDeque<PooledRequest>,
    queued: BTreeSet<TxnId>,
    recycles: BTreeMap<TxnId, u32>,
}

impl RequestPool {
    pub fn new() -> RequestPool {
        RequestPool::default()
    }

    /// Enqueues a fresh request. Returns false if it is already queued.
    pub fn push(&mut self, request: TransactionRequest) -> bool {
        self.enqueue(request, false)
    }

    /// Re-enqueues a transaction whose leg was cut by a fork. Duplicate
    /// notices for a transaction already queued are ignored.
    pub fn recycle(&mut self, request: TransactionRequest) -> bool {
        self.enqueue(request, true)
    }

    fn enqueue(&mut self, request: TransactionRequest, recycled: bool) -> bool {
        if !self.queued.insert(request.uuid) {
            return false;
        }
        let count = self.recycles.entry(request.uuid).or_insert(0);
        if recycled {
            *count += 1;
        }
        let recycle_count = *count;
        self.queue.push_back(PooledRequest { request, recycle_count });
        true
    }

    pub fn pop(&mut self) -> Option<PooledRequest> {
        let next = self.queue.pop_front()?;
        self.queued.remove(&next.request.uuid);
        Some(next)
    }

    pub fn recycle_count(&self, uuid: TxnId) -> u32 {
        self.recycles.get(&uuid).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainId;
    use crate::time::Time;

    fn req(uuid: u64) -> TransactionRequest {
        TransactionRequest { uuid: TxnId(uuid), coordinator: ChainId(1), legs: alloc::vec![], submit_time: Time::ZERO }
    }

    #[test]
    fn recycle_is_deduplicated() {
        let mut p = RequestPool::new();
        assert!(p.recycle(req(3)));
        assert!(!p.recycle(req(3)));
        assert_eq!(p.len(), 1);
        let got = p.pop().unwrap();
        assert_eq!(got.recycle_count, 1);
        assert!(p.recycle(req(3)));
        assert_eq!(p.pop().unwrap().recycle_count, 2);
        assert_eq!(p.recycle_count(TxnId(3)), 2);
    }

    #[test]
    fn fifo_order() {
        let mut p = RequestPool::new();
        p.push(req(2));
        p.push(req(1));
        assert_eq!(p.pop().unwrap().request.uuid, TxnId(2));
        assert_eq!(p.pop().unwrap().request.uuid, TxnId(1));
        assert!(p.pop().is_none());
    }
}

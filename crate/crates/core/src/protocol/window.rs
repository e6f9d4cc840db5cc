//! Per-chain record of recently applied, not yet final, legs (RBP).

use alloc::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, TxnId};
use crate::time::{Dur, Time};

/// Legs applied within the last `delta` live in the window proper. Once they
/// age out they move to a settling set and stay recyclable until their block
/// is final, so a late fork can still be traced back to its transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlidingWindow {
    chain: ChainId,
    recent: BTreeSet<(Time, TxnId)>,
    applied_at: BTreeMap<TxnId, Time>,
    settling: BTreeSet<TxnId>,
}

impl SlidingWindow {
    pub fn new(chain: ChainId) -> SlidingWindow {
        SlidingWindow { chain, recent: BTreeSet::new(), applied_at: BTreeMap::new(), settling: BTreeSet::new() }
    }

    pub fn chain(&self) -> ChainId {
        self.chain
    }

    /// Records an application; a re-insert replaces the earlier entry.
    pub fn insert(&mut self, txn: TxnId, at: Time) {
        self.remove(txn);
        self.recent.insert((at, txn));
        self.applied_at.insert(txn, at);
    }

    /// Moves entries applied at or before `now - delta` to the settling set.
    pub fn advance(&mut self, now: Time, delta: Dur) {
        let Some(horizon) = now.as_micros().checked_sub(delta.as_micros()) else {
            return;
        };
        while let Some(&(at, txn)) = self.recent.first() {
            if at.as_micros() > horizon {
                break;
            }
            self.recent.pop_first();
            self.settling.insert(txn);
        }
    }

    /// Drops a leg whose block became final. Returns whether it was tracked.
    pub fn finalize(&mut self, txn: TxnId) -> bool {
        self.remove(txn)
    }

    /// Removes a leg stranded on a cut branch. Returns whether it was tracked,
    /// which is the condition for recycling its transaction.
    pub fn take_cut(&mut self, txn: TxnId) -> bool {
        self.remove(txn)
    }

    fn remove(&mut self, txn: TxnId) -> bool {
        match self.applied_at.remove(&txn) {
            Some(at) => {
                if !self.recent.remove(&(at, txn)) {
                    self.settling.remove(&txn);
                }
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, txn: TxnId) -> bool {
        self.applied_at.contains_key(&txn)
    }

    /// Number of legs applied within the last `delta`.
    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// Legs still awaiting finality, including aged-out ones.
    pub fn tracked(&self) -> usize {
        self.applied_at.len()
    }

    /// Throughput estimate: window size divided by the window length, per second.
    pub fn throughput(&self, delta: Dur) -> f64 {
        if delta == Dur::ZERO {
            return 0.0;
        }
        self.len() as f64 / delta.as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ages_out_but_stays_recyclable() {
        let mut w = SlidingWindow::new(ChainId(1));
        let d = Dur::from_secs(2);
        w.insert(TxnId(1), Time::from_millis(0));
        w.insert(TxnId(2), Time::from_millis(1500));
        w.advance(Time::from_millis(2500), d);
        assert_eq!(w.len(), 1);
        assert_eq!(w.tracked(), 2);
        assert!(w.take_cut(TxnId(1)));
        assert!(!w.take_cut(TxnId(1)));
        assert!(w.finalize(TxnId(2)));
        assert_eq!(w.tracked(), 0);
        assert!(w.is_empty());
    }

    #[test]
    fn throughput_estimate() {
        let mut w = SlidingWindow::new(ChainId(1));
        for i in 0..10 {
            w.insert(TxnId(i), Time::from_millis(100 * i));
        }
        w.advance(Time::from_millis(1000), Dur::from_secs(1));
        // Entry at t=0 is exactly delta old and leaves the window.
        assert_eq!(w.len(), 9);
        assert!((w.throughput(Dur::from_secs(1)) - 9.0).abs() < 1e-12);
    }
}

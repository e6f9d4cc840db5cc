//! Post-hoc ACID audit of a finished run.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, TxnId};
use crate::protocol::ProtocolKind;
use crate::trace::{Outcome, RunTrace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Present on the final main branch of some leg chains but not others.
    PartialCommit { txn: TxnId, present: Vec<ChainId>, missing: Vec<ChainId> },
    /// Marked committed but on no leg chain.
    CommittedButAbsent { txn: TxnId },
    /// Aborted yet on some chain's main branch.
    AbortedButPresent { txn: TxnId },
    /// Not terminal although the run reached quiescence.
    Unfinished { txn: TxnId },
    /// The ledgers' total differs from the initial total.
    TotalChanged { initial: u128, finished: u128 },
    /// Ledger balance differs from replaying the final main branch.
    BalanceMismatch { chain: ChainId, account: u32, ledger: u64, replayed: i128 },
    /// An SBP transaction was recycled after completion.
    RecycledAfterCommit { txn: TxnId },
    LockConflict { txn: TxnId, chain: ChainId, holder: TxnId },
    LocksHeldAtEnd { chain: ChainId, count: u32 },
    /// Committed, but the leg's block is not in the finalized prefix.
    NotFinalized { txn: TxnId, chain: ChainId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub atomicity: Verdict,
    pub consistency: Verdict,
    pub isolation: Verdict,
    pub durability: Verdict,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.atomicity.pass() && self.consistency.pass() && self.isolation.pass() && self.durability.pass()
    }

    pub fn violation_count(&self) -> usize {
        self.atomicity.violations.len()
            + self.consistency.violations.len()
            + self.isolation.violations.len()
            + self.durability.violations.len()
    }
}

/// Audits a quiescent run. Pure: the same trace always yields the same report.
pub fn audit_acid(trace: &RunTrace) -> AuditReport {
    let mut r = AuditReport::default();

    for t in &trace.txns {
        let txn = t.request.uuid;
        let mut present = Vec::new();
        let mut missing = Vec::new();
        for leg in &t.request.legs {
            match trace.chain(leg.chain).and_then(|c| c.main_index_of(txn)) {
                Some(_) => present.push(leg.chain),
                None => missing.push(leg.chain),
            }
        }
        if !present.is_empty() && !missing.is_empty() {
            r.atomicity.violations.push(Violation::PartialCommit { txn, present: present.clone(), missing });
        }
        match t.outcome {
            Outcome::Committed if present.is_empty() => {
                r.atomicity.violations.push(Violation::CommittedButAbsent { txn })
            }
            Outcome::Aborted if !present.is_empty() => {
                r.atomicity.violations.push(Violation::AbortedButPresent { txn })
            }
            Outcome::Unfinished if trace.quiescent => r.atomicity.violations.push(Violation::Unfinished { txn }),
            _ => {}
        }
        if trace.protocol == ProtocolKind::Sbp && t.recycled_after_commit > 0 {
            r.consistency.violations.push(Violation::RecycledAfterCommit { txn });
        }
        if t.outcome == Outcome::Committed {
            for leg in &t.request.legs {
                let Some(c) = trace.chain(leg.chain) else { continue };
                let final_enough = match (c.main_index_of(txn), c.finalized_height) {
                    (Some(i), Some(h)) => i <= h,
                    _ => false,
                };
                if !final_enough {
                    r.durability.violations.push(Violation::NotFinalized { txn, chain: leg.chain });
                }
            }
        }
    }

    // Conservation and agreement between ledgers and main branches.
    let initial: u128 = trace.chains.iter().flat_map(|c| c.initial_balances.iter()).map(|&b| b as u128).sum();
    let finished: u128 = trace.chains.iter().flat_map(|c| c.final_balances.iter()).map(|&b| b as u128).sum();
    if initial != finished {
        r.consistency.violations.push(Violation::TotalChanged { initial, finished });
    }
    for c in &trace.chains {
        let mut replayed: Vec<i128> = c.initial_balances.iter().map(|&b| b as i128).collect();
        for t in &trace.txns {
            if c.main_index_of(t.request.uuid).is_none() {
                continue;
            }
            if let Some(leg) = t.request.leg_on(c.params.chain) {
                if let Some(slot) = replayed.get_mut(leg.entity.account as usize) {
                    *slot += leg.delta as i128;
                }
            }
        }
        for (account, (&ledger, &rep)) in c.final_balances.iter().zip(&replayed).enumerate() {
            if ledger as i128 != rep {
                r.consistency.violations.push(Violation::BalanceMismatch {
                    chain: c.params.chain,
                    account: account as u32,
                    ledger,
                    replayed: rep,
                });
            }
        }
        if trace.quiescent && c.locks_held > 0 {
            r.isolation.violations.push(Violation::LocksHeldAtEnd { chain: c.params.chain, count: c.locks_held });
        }
    }

    for v in &trace.lock_violations {
        r.isolation.violations.push(Violation::LockConflict { txn: v.txn, chain: v.chain, holder: v.holder });
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::sim::run_config;

    fn trace(n: u32) -> RunTrace {
        run_config(&RunConfig { n_chains: 3, n_transactions: n, ..RunConfig::default() }).unwrap()
    }

    #[test]
    fn empty_trace_passes() {
        let report = audit_acid(&trace(0));
        assert!(report.pass());
        assert_eq!(report.violation_count(), 0);
    }

    #[test]
    fn injected_partial_commit_fails_atomicity() {
        let mut t = trace(50);
        assert!(audit_acid(&t).pass());
        let victim = t.committed().next().unwrap().request.clone();
        let chain = victim.legs[0].chain;
        let summary = t.chains.iter_mut().find(|c| c.params.chain == chain).unwrap();
        summary.main_txns.retain(|(x, _)| *x != victim.uuid);
        let report = audit_acid(&t);
        assert!(!report.atomicity.pass());
        assert!(report
            .atomicity
            .violations
            .iter()
            .any(|v| matches!(v, Violation::PartialCommit { txn, .. } if *txn == victim.uuid)));
        // The ledger no longer matches the replayed branch either.
        assert!(!report.consistency.pass());
    }

    #[test]
    fn lost_money_fails_consistency() {
        let mut t = trace(20);
        t.chains[0].final_balances[0] -= 1;
        let report = audit_acid(&t);
        assert!(report.consistency.violations.iter().any(|v| matches!(v, Violation::TotalChanged { .. })));
        assert!(report.atomicity.pass());
    }

    #[test]
    fn auditing_is_pure() {
        let t = trace(100);
        assert_eq!(audit_acid(&t), audit_acid(&t));
    }
}

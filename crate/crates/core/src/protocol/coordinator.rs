//! Coordinator side of the two-phase exchange, shared by every protocol.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Message, MsgKind, StepError};
use crate::chain::{ChainId, TxnId};
use crate::time::{Dur, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoordPhase {
    Init,
    PrecommitSent,
    CommitSent,
    Committed,
    Aborted,
}

impl CoordPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, CoordPhase::Committed | CoordPhase::Aborted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordConfig {
    /// Phase-one deadline per attempt.
    pub timeout: Dur,
    /// Re-broadcasts allowed before an abortable attempt gives up.
    pub max_retries: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordInput {
    Start,
    Deliver { from: ChainId, msg: Message },
    Timeout { incarnation: u32, attempt: u32 },
    /// A participant chain has no live node left to act as proxy.
    ChainUnavailable,
    /// The recycled request was taken from the pool: run both phases again.
    Restart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Effect {
    Send { to: ChainId, msg: Message },
    SetTimer { at: Time, incarnation: u32, attempt: u32 },
    Committed,
    Aborted,
    /// A leg was cut by a fork; the request must go back to the pool.
    Recycle,
    /// The transaction was sent back through both phases under a new incarnation.
    Restarted { incarnation: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoordinatorState {
    pub txn: TxnId,
    pub participants: Vec<ChainId>,
    pub phase: CoordPhase,
    pub pending_replies: BTreeSet<ChainId>,
    pub deadline_timer: Option<Time>,
    /// Crash failures observed during phase one and phase two.
    pub phase_failures: (u32, u32),
    pub incarnation: u32,
    pub attempt: u32,
    /// Cleared once a commit decision has been made; a restarted incarnation
    /// must never abort.
    pub abortable: bool,
    /// A recycle was requested and the restart has not happened yet.
    pub recycle_pending: bool,
}

impl CoordinatorState {
    pub fn new(txn: TxnId, mut participants: Vec<ChainId>) -> CoordinatorState {
        participants.sort_unstable();
        participants.dedup();
        CoordinatorState {
            txn,
            participants,
            phase: CoordPhase::Init,
            pending_replies: BTreeSet::new(),
            deadline_timer: None,
            phase_failures: (0, 0),
            incarnation: 0,
            attempt: 0,
            abortable: true,
            recycle_pending: false,
        }
    }

    /// Charges one crash failure to the phase the transaction is in.
    pub fn note_failure(&mut self) {
        match self.phase {
            CoordPhase::Init | CoordPhase::PrecommitSent => self.phase_failures.0 += 1,
            _ => self.phase_failures.1 += 1,
        }
    }

    pub fn failures(&self) -> u32 {
        self.phase_failures.0 + self.phase_failures.1
    }

    pub fn step(
        &mut self,
        input: CoordInput,
        now: Time,
        cfg: &CoordConfig,
    ) -> Result<Vec<Effect>, StepError> {
        let mut out = Vec::new();
        match input {
            CoordInput::Start => {
                if self.phase == CoordPhase::Init {
                    self.begin_phase_one(now, cfg, &mut out);
                }
            }
            CoordInput::Timeout { incarnation, attempt } => {
                let live = self.phase == CoordPhase::PrecommitSent
                    && incarnation == self.incarnation
                    && attempt == self.attempt;
                if live {
                    if self.attempt < cfg.max_retries || !self.abortable {
                        self.attempt += 1;
                        let msg = Message::new(MsgKind::Precommit, self.txn, self.incarnation, self.attempt);
                        for &to in &self.pending_replies {
                            out.push(Effect::Send { to, msg });
                        }
                        self.arm_deadline(now, cfg, &mut out);
                    } else {
                        self.abort(&mut out);
                    }
                }
            }
            CoordInput::ChainUnavailable => {
                if self.phase == CoordPhase::PrecommitSent && self.abortable {
                    self.abort(&mut out);
                }
            }
            CoordInput::Restart => {
                if self.recycle_pending {
                    self.recycle_pending = false;
                    self.incarnation += 1;
                    self.attempt = 0;
                    self.abortable = false;
                    self.begin_phase_one(now, cfg, &mut out);
                    out.push(Effect::Restarted { incarnation: self.incarnation });
                }
            }
            CoordInput::Deliver { from, msg } => {
                if msg.txn != self.txn {
                    return Err(StepError::UnknownTxn { got: msg.txn, expected: self.txn });
                }
                if msg.incarnation != self.incarnation {
                    return Err(StepError::StaleEpoch { got: msg.incarnation, current: self.incarnation });
                }
                match (self.phase, msg.kind) {
                    (CoordPhase::PrecommitSent, MsgKind::Ready) => {
                        self.pending_replies.remove(&from);
                        if self.pending_replies.is_empty() {
                            self.phase = CoordPhase::CommitSent;
                            self.abortable = false;
                            self.deadline_timer = None;
                            self.pending_replies = self.participants.iter().copied().collect();
                            let msg = Message::new(MsgKind::Commit, self.txn, self.incarnation, 0);
                            for &to in &self.participants {
                                out.push(Effect::Send { to, msg });
                            }
                        }
                    }
                    (CoordPhase::PrecommitSent, MsgKind::AbortVote) => {
                        if self.abortable {
                            self.abort(&mut out);
                        } else {
                            debug_assert!(false, "abort vote for a decided transaction");
                        }
                    }
                    (CoordPhase::CommitSent, MsgKind::Done) => {
                        self.pending_replies.remove(&from);
                        if self.pending_replies.is_empty() {
                            self.phase = CoordPhase::Committed;
                            out.push(Effect::Committed);
                        }
                    }
                    (CoordPhase::CommitSent | CoordPhase::Committed, MsgKind::Recycle) => {
                        if !self.recycle_pending {
                            self.recycle_pending = true;
                            out.push(Effect::Recycle);
                        }
                    }
                    (_, MsgKind::Ready | MsgKind::AbortVote | MsgKind::Done | MsgKind::Recycle) => {
                        // Late or duplicate reply: nothing left to decide.
                    }
                    (_, other) => return Err(StepError::Unexpected(other)),
                }
            }
        }
        Ok(out)
    }

    fn begin_phase_one(&mut self, now: Time, cfg: &CoordConfig, out: &mut Vec<Effect>) {
        self.phase = CoordPhase::PrecommitSent;
        self.pending_replies = self.participants.iter().copied().collect();
        let msg = Message::new(MsgKind::Precommit, self.txn, self.incarnation, self.attempt);
        for &to in &self.participants {
            out.push(Effect::Send { to, msg });
        }
        self.arm_deadline(now, cfg, out);
    }

    fn arm_deadline(&mut self, now: Time, cfg: &CoordConfig, out: &mut Vec<Effect>) {
        let at = now + cfg.timeout;
        self.deadline_timer = Some(at);
        out.push(Effect::SetTimer { at, incarnation: self.incarnation, attempt: self.attempt });
    }

    fn abort(&mut self, out: &mut Vec<Effect>) {
        self.phase = CoordPhase::Aborted;
        self.deadline_timer = None;
        self.pending_replies.clear();
        let msg = Message::new(MsgKind::Abort, self.txn, self.incarnation, self.attempt);
        for &to in &self.participants {
            out.push(Effect::Send { to, msg });
        }
        out.push(Effect::Aborted);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const T: TxnId = TxnId(7);
    const CFG: CoordConfig = CoordConfig { timeout: Dur::from_millis(500), max_retries: 1 };

    fn three() -> CoordinatorState {
        CoordinatorState::new(T, vec![ChainId(1), ChainId(2), ChainId(3)])
    }

    fn reply(c: &mut CoordinatorState, from: u32, kind: MsgKind) -> Vec<Effect> {
        let msg = Message::new(kind, T, c.incarnation, 0);
        c.step(CoordInput::Deliver { from: ChainId(from), msg }, Time::ZERO, &CFG).unwrap()
    }

    fn sends(effects: &[Effect], kind: MsgKind) -> usize {
        effects
            .iter()
            .filter(|e| matches!(e, Effect::Send { msg, .. } if msg.kind == kind))
            .count()
    }

    #[test]
    fn civil_fan_out() {
        let mut c = three();
        let out = c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        assert_eq!(sends(&out, MsgKind::Precommit), 3);
        assert!(out.contains(&Effect::SetTimer { at: Time::from_millis(500), incarnation: 0, attempt: 0 }));
        reply(&mut c, 1, MsgKind::Ready);
        reply(&mut c, 2, MsgKind::Ready);
        let out = reply(&mut c, 3, MsgKind::Ready);
        assert_eq!(sends(&out, MsgKind::Commit), 3);
        assert_eq!(c.phase, CoordPhase::CommitSent);
        reply(&mut c, 1, MsgKind::Done);
        reply(&mut c, 3, MsgKind::Done);
        let out = reply(&mut c, 2, MsgKind::Done);
        assert_eq!(out, vec![Effect::Committed]);
        assert_eq!(c.phase, CoordPhase::Committed);
    }

    #[test]
    fn abort_vote_aborts_everyone() {
        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        reply(&mut c, 1, MsgKind::Ready);
        let out = reply(&mut c, 2, MsgKind::AbortVote);
        assert_eq!(sends(&out, MsgKind::Abort), 3);
        assert!(out.contains(&Effect::Aborted));
        assert_eq!(c.phase, CoordPhase::Aborted);
        // Terminal: later replies change nothing.
        assert!(reply(&mut c, 3, MsgKind::Ready).is_empty());
        assert_eq!(c.phase, CoordPhase::Aborted);
    }

    #[test]
    fn duplicate_ready_is_idempotent() {
        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        reply(&mut c, 2, MsgKind::Ready);
        let before = c.clone();
        let out = reply(&mut c, 2, MsgKind::Ready);
        assert!(out.is_empty());
        assert_eq!(c, before);
    }

    #[test]
    fn timeout_retries_then_aborts() {
        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        reply(&mut c, 1, MsgKind::Ready);
        let out = c
            .step(CoordInput::Timeout { incarnation: 0, attempt: 0 }, Time::from_millis(500), &CFG)
            .unwrap();
        assert_eq!(sends(&out, MsgKind::Precommit), 2, "only chains still pending are re-asked");
        assert_eq!(c.attempt, 1);
        // A stale timer for attempt 0 is ignored.
        assert!(c
            .step(CoordInput::Timeout { incarnation: 0, attempt: 0 }, Time::from_millis(900), &CFG)
            .unwrap()
            .is_empty());
        let out = c
            .step(CoordInput::Timeout { incarnation: 0, attempt: 1 }, Time::from_millis(1000), &CFG)
            .unwrap();
        assert!(out.contains(&Effect::Aborted));
    }

    #[test]
    fn recycle_restarts_without_abort_option() {
        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        for ch in 1..=3 {
            reply(&mut c, ch, MsgKind::Ready);
        }
        for ch in 1..=3 {
            reply(&mut c, ch, MsgKind::Done);
        }
        assert_eq!(c.phase, CoordPhase::Committed);
        let out = reply(&mut c, 2, MsgKind::Recycle);
        assert_eq!(out, vec![Effect::Recycle]);
        // A second chain reporting the same cut does not recycle twice.
        assert!(reply(&mut c, 3, MsgKind::Recycle).is_empty());
        let out = c.step(CoordInput::Restart, Time::ZERO, &CFG).unwrap();
        assert!(out.contains(&Effect::Restarted { incarnation: 1 }));
        assert_eq!(sends(&out, MsgKind::Precommit), 3);
        assert!(!c.abortable);
        // A second recycle notice for the old incarnation is stale.
        let stale = Message::new(MsgKind::Recycle, T, 0, 0);
        assert_eq!(
            c.step(CoordInput::Deliver { from: ChainId(3), msg: stale }, Time::ZERO, &CFG),
            Err(StepError::StaleEpoch { got: 0, current: 1 })
        );
        // Non-abortable incarnations keep retrying instead of aborting.
        for attempt in 0..5 {
            let out = c
                .step(CoordInput::Timeout { incarnation: 1, attempt }, Time::ZERO, &CFG)
                .unwrap();
            assert!(!out.contains(&Effect::Aborted));
        }
    }

    #[test]
    fn lost_chain_aborts_only_undecided() {
        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        let out = c.step(CoordInput::ChainUnavailable, Time::ZERO, &CFG).unwrap();
        assert!(out.contains(&Effect::Aborted));

        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        for ch in 1..=3 {
            reply(&mut c, ch, MsgKind::Ready);
        }
        assert!(c.step(CoordInput::ChainUnavailable, Time::ZERO, &CFG).unwrap().is_empty());
        assert_eq!(c.phase, CoordPhase::CommitSent);
    }

    #[test]
    fn wrong_txn_rejected() {
        let mut c = three();
        c.step(CoordInput::Start, Time::ZERO, &CFG).unwrap();
        let msg = Message::new(MsgKind::Ready, TxnId(8), 0, 0);
        assert!(matches!(
            c.step(CoordInput::Deliver { from: ChainId(1), msg }, Time::ZERO, &CFG),
            Err(StepError::UnknownTxn { .. })
        ));
    }
}

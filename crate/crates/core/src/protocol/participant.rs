//! Participant side: one instance per (transaction, leg chain).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Message, MsgKind, ProtocolKind, StepError};
use crate::chain::{ChainId, EntityId, Ledger, TxnId};
use crate::time::{Dur, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartPhase {
    Idle,
    /// Voted READY; the entity lock is held.
    Ready,
    /// Leg applied, DONE withheld until the block is final (SBP).
    Applied,
    DoneSent,
    /// DONE sent and the leg's block is final.
    Finished,
    Aborted,
}

impl PartPhase {
    pub fn is_open(self) -> bool {
        matches!(self, PartPhase::Idle | PartPhase::Ready | PartPhase::Applied)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartInput {
    Deliver(Message),
    /// The block carrying this leg entered the finalized prefix.
    Finalized,
    /// The fixed post-apply wait elapsed (SBP without finality tracking).
    WaitElapsed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartCtx {
    pub now: Time,
    pub kind: ProtocolKind,
    pub delta: Dur,
    /// SBP acknowledges after a fixed wait of `delta` instead of observing finality.
    pub fixed_wait: bool,
    /// The leg currently sits in the mempool or on a block that has not been cut.
    pub leg_pending: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartEffect {
    /// Message back to the coordinator chain.
    Reply(Message),
    /// A state change the proxy must propagate to the rest of its chain.
    Replicate,
    /// Put the leg into the chain's mempool for inclusion in a block.
    SubmitLeg,
    WindowInsert(Time),
    WaitUntil(Time),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParticipantState {
    pub txn: TxnId,
    pub coordinator: ChainId,
    pub entity: EntityId,
    pub delta: i64,
    pub phase: PartPhase,
    pub lock_held: Option<EntityId>,
    pub done_wait_until: Option<Time>,
    pub window_entry: Option<Time>,
    pub incarnation: u32,
    pub applied: bool,
}

impl ParticipantState {
    pub fn new(txn: TxnId, coordinator: ChainId, entity: EntityId, delta: i64) -> ParticipantState {
        ParticipantState {
            txn,
            coordinator,
            entity,
            delta,
            phase: PartPhase::Idle,
            lock_held: None,
            done_wait_until: None,
            window_entry: None,
            incarnation: 0,
            applied: false,
        }
    }

    pub fn chain(&self) -> ChainId {
        self.entity.chain
    }

    pub fn step(
        &mut self,
        ledger: &mut Ledger,
        input: PartInput,
        ctx: &PartCtx,
    ) -> Result<Vec<PartEffect>, StepError> {
        let mut out = Vec::new();
        match input {
            PartInput::Deliver(msg) => {
                if msg.txn != self.txn {
                    return Err(StepError::UnknownTxn { got: msg.txn, expected: self.txn });
                }
                if msg.incarnation < self.incarnation {
                    return Err(StepError::StaleEpoch { got: msg.incarnation, current: self.incarnation });
                }
                self.incarnation = msg.incarnation;
                match msg.kind {
                    MsgKind::Precommit => self.on_precommit(ledger, msg, &mut out)?,
                    MsgKind::Commit => self.on_commit(ledger, ctx, &mut out)?,
                    MsgKind::Abort => self.on_abort(ledger, &mut out)?,
                    other => return Err(StepError::Unexpected(other)),
                }
            }
            PartInput::Finalized => match self.phase {
                PartPhase::Applied if !ctx.fixed_wait => {
                    self.release(ledger)?;
                    self.done_wait_until = Some(ctx.now);
                    self.phase = PartPhase::Finished;
                    out.push(PartEffect::Reply(self.reply(MsgKind::Done, 0)));
                }
                PartPhase::DoneSent => self.phase = PartPhase::Finished,
                _ => {}
            },
            PartInput::WaitElapsed => {
                if self.phase == PartPhase::Applied && ctx.fixed_wait {
                    self.release(ledger)?;
                    self.phase = PartPhase::DoneSent;
                    out.push(PartEffect::Reply(self.reply(MsgKind::Done, 0)));
                }
            }
        }
        Ok(out)
    }

    fn reply(&self, kind: MsgKind, attempt: u32) -> Message {
        Message::new(kind, self.txn, self.incarnation, attempt)
    }

    fn release(&mut self, ledger: &mut Ledger) -> Result<(), StepError> {
        if let Some(e) = self.lock_held.take() {
            ledger.unlock(e, self.txn)?;
        }
        Ok(())
    }

    fn on_precommit(&mut self, ledger: &mut Ledger, msg: Message, out: &mut Vec<PartEffect>) -> Result<(), StepError> {
        match self.phase {
            PartPhase::Idle => {
                let held_by_other = matches!(ledger.lock_holder(self.entity), Some(h) if h != self.txn);
                if held_by_other || !ledger.covers(self.entity, self.delta)? {
                    self.phase = PartPhase::Aborted;
                    out.push(PartEffect::Reply(self.reply(MsgKind::AbortVote, msg.attempt)));
                } else {
                    ledger.lock(self.entity, self.txn)?;
                    self.lock_held = Some(self.entity);
                    self.phase = PartPhase::Ready;
                    out.push(PartEffect::Replicate);
                    out.push(PartEffect::Reply(self.reply(MsgKind::Ready, msg.attempt)));
                }
            }
            PartPhase::Aborted => {
                out.push(PartEffect::Reply(self.reply(MsgKind::AbortVote, msg.attempt)));
            }
            // Re-broadcast or restart: the vote already stands.
            _ => out.push(PartEffect::Reply(self.reply(MsgKind::Ready, msg.attempt))),
        }
        Ok(())
    }

    fn on_commit(&mut self, ledger: &mut Ledger, ctx: &PartCtx, out: &mut Vec<PartEffect>) -> Result<(), StepError> {
        match self.phase {
            PartPhase::Ready => {
                ledger.apply_leg(self.entity, self.delta, self.txn)?;
                self.applied = true;
                out.push(PartEffect::Replicate);
                out.push(PartEffect::SubmitLeg);
                match ctx.kind {
                    ProtocolKind::Sbp => {
                        self.phase = PartPhase::Applied;
                        if ctx.fixed_wait {
                            let at = ctx.now + ctx.delta;
                            self.done_wait_until = Some(at);
                            out.push(PartEffect::WaitUntil(at));
                        }
                    }
                    ProtocolKind::Rbp => {
                        self.window_entry = Some(ctx.now);
                        out.push(PartEffect::WindowInsert(ctx.now));
                        self.release(ledger)?;
                        self.phase = PartPhase::DoneSent;
                        out.push(PartEffect::Reply(self.reply(MsgKind::Done, 0)));
                    }
                    ProtocolKind::Tpc | ProtocolKind::Hub => {
                        self.release(ledger)?;
                        self.phase = PartPhase::DoneSent;
                        out.push(PartEffect::Reply(self.reply(MsgKind::Done, 0)));
                    }
                }
            }
            PartPhase::Applied => {
                if !ctx.leg_pending {
                    out.push(PartEffect::Replicate);
                    out.push(PartEffect::SubmitLeg);
                }
            }
            PartPhase::DoneSent | PartPhase::Finished => {
                // Restarted transaction: the balance change stands, only the
                // block inclusion has to be redone if it was cut.
                if !ctx.leg_pending {
                    out.push(PartEffect::Replicate);
                    out.push(PartEffect::SubmitLeg);
                    if ctx.kind == ProtocolKind::Rbp {
                        self.window_entry = Some(ctx.now);
                        out.push(PartEffect::WindowInsert(ctx.now));
                    }
                }
                out.push(PartEffect::Reply(self.reply(MsgKind::Done, 0)));
            }
            PartPhase::Idle | PartPhase::Aborted => return Err(StepError::Unexpected(MsgKind::Commit)),
        }
        Ok(())
    }

    fn on_abort(&mut self, ledger: &mut Ledger, out: &mut Vec<PartEffect>) -> Result<(), StepError> {
        match self.phase {
            PartPhase::Idle => self.phase = PartPhase::Aborted,
            PartPhase::Ready => {
                self.release(ledger)?;
                self.phase = PartPhase::Aborted;
                out.push(PartEffect::Replicate);
            }
            PartPhase::Aborted => {}
            PartPhase::Applied | PartPhase::DoneSent | PartPhase::Finished => {
                return Err(StepError::Unexpected(MsgKind::Abort))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: ChainId = ChainId(2);
    const T: TxnId = TxnId(5);

    fn ent() -> EntityId {
        EntityId { chain: C, account: 0 }
    }

    fn ctx(kind: ProtocolKind) -> PartCtx {
        PartCtx { now: Time::from_millis(10), kind, delta: Dur::from_secs(2), fixed_wait: false, leg_pending: true }
    }

    fn deliver(p: &mut ParticipantState, l: &mut Ledger, kind: MsgKind, c: &PartCtx) -> Vec<PartEffect> {
        p.step(l, PartInput::Deliver(Message::new(kind, T, p.incarnation, 0)), c).unwrap()
    }

    fn replies(out: &[PartEffect]) -> Vec<MsgKind> {
        out.iter()
            .filter_map(|e| match e {
                PartEffect::Reply(m) => Some(m.kind),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn free_entity_votes_ready_and_locks() {
        let mut l = Ledger::new(C, 1, 100);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), -40);
        let out = deliver(&mut p, &mut l, MsgKind::Precommit, &ctx(ProtocolKind::Sbp));
        assert_eq!(replies(&out), [MsgKind::Ready]);
        assert_eq!(l.lock_holder(ent()), Some(T));
        assert_eq!(p.phase, PartPhase::Ready);
    }

    #[test]
    fn locked_entity_votes_abort() {
        let mut l = Ledger::new(C, 1, 100);
        l.lock(ent(), TxnId(99)).unwrap();
        let mut p = ParticipantState::new(T, ChainId(1), ent(), -40);
        let out = deliver(&mut p, &mut l, MsgKind::Precommit, &ctx(ProtocolKind::Sbp));
        assert_eq!(replies(&out), [MsgKind::AbortVote]);
        assert_eq!(l.lock_holder(ent()), Some(TxnId(99)));
        // A late re-broadcast gets the same answer and no lock.
        let out = deliver(&mut p, &mut l, MsgKind::Precommit, &ctx(ProtocolKind::Sbp));
        assert_eq!(replies(&out), [MsgKind::AbortVote]);
    }

    #[test]
    fn insufficient_funds_votes_abort() {
        let mut l = Ledger::new(C, 1, 10);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), -40);
        let out = deliver(&mut p, &mut l, MsgKind::Precommit, &ctx(ProtocolKind::Rbp));
        assert_eq!(replies(&out), [MsgKind::AbortVote]);
        assert_eq!(l.locked_count(), 0);
    }

    #[test]
    fn rbp_done_right_after_apply() {
        let mut l = Ledger::new(C, 1, 100);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), -40);
        let c = ctx(ProtocolKind::Rbp);
        deliver(&mut p, &mut l, MsgKind::Precommit, &c);
        let out = deliver(&mut p, &mut l, MsgKind::Commit, &c);
        assert_eq!(replies(&out), [MsgKind::Done]);
        assert!(out.contains(&PartEffect::WindowInsert(c.now)));
        assert_eq!(l.balance(ent()), Some(60));
        assert_eq!(l.locked_count(), 0);
    }

    #[test]
    fn sbp_done_only_after_finality() {
        let mut l = Ledger::new(C, 1, 100);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), 25);
        let c = ctx(ProtocolKind::Sbp);
        deliver(&mut p, &mut l, MsgKind::Precommit, &c);
        let out = deliver(&mut p, &mut l, MsgKind::Commit, &c);
        assert!(replies(&out).is_empty());
        assert!(out.contains(&PartEffect::SubmitLeg));
        assert_eq!(l.lock_holder(ent()), Some(T), "lock held until final");
        let out = p.step(&mut l, PartInput::Finalized, &c).unwrap();
        assert_eq!(replies(&out), [MsgKind::Done]);
        assert_eq!(p.phase, PartPhase::Finished);
        assert_eq!(l.locked_count(), 0);
    }

    #[test]
    fn sbp_fixed_wait() {
        let mut l = Ledger::new(C, 1, 100);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), 25);
        let c = PartCtx { fixed_wait: true, ..ctx(ProtocolKind::Sbp) };
        deliver(&mut p, &mut l, MsgKind::Precommit, &c);
        let out = deliver(&mut p, &mut l, MsgKind::Commit, &c);
        assert!(out.contains(&PartEffect::WaitUntil(c.now + c.delta)));
        assert!(p.step(&mut l, PartInput::Finalized, &c).unwrap().is_empty());
        let out = p.step(&mut l, PartInput::WaitElapsed, &c).unwrap();
        assert_eq!(replies(&out), [MsgKind::Done]);
    }

    #[test]
    fn abort_releases_lock() {
        let mut l = Ledger::new(C, 1, 100);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), -5);
        let c = ctx(ProtocolKind::Sbp);
        deliver(&mut p, &mut l, MsgKind::Precommit, &c);
        deliver(&mut p, &mut l, MsgKind::Abort, &c);
        assert_eq!(p.phase, PartPhase::Aborted);
        assert_eq!(l.locked_count(), 0);
        assert_eq!(l.balance(ent()), Some(100));
    }

    #[test]
    fn restart_resubmits_without_reapplying() {
        let mut l = Ledger::new(C, 1, 100);
        let mut p = ParticipantState::new(T, ChainId(1), ent(), -40);
        let c = ctx(ProtocolKind::Rbp);
        deliver(&mut p, &mut l, MsgKind::Precommit, &c);
        deliver(&mut p, &mut l, MsgKind::Commit, &c);
        let cut = PartCtx { leg_pending: false, ..c };
        let out = p
            .step(&mut l, PartInput::Deliver(Message::new(MsgKind::Precommit, T, 1, 0)), &cut)
            .unwrap();
        assert_eq!(replies(&out), [MsgKind::Ready]);
        let out = p
            .step(&mut l, PartInput::Deliver(Message::new(MsgKind::Commit, T, 1, 0)), &cut)
            .unwrap();
        assert!(out.contains(&PartEffect::SubmitLeg));
        assert_eq!(replies(&out), [MsgKind::Done]);
        assert_eq!(l.balance(ent()), Some(60));
        // Old incarnation traffic is now stale.
        assert!(matches!(
            p.step(&mut l, PartInput::Deliver(Message::new(MsgKind::Commit, T, 0, 0)), &cut),
            Err(StepError::StaleEpoch { .. })
        ));
    }
}

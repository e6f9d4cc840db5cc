//! Exhaustive small-scope checking.
//!
//! [`explore`] enumerates every interleaving of one transaction between two
//! chains over the pure protocol machines: message deliveries in any order,
//! coordinator timeouts at any moment, block inclusion and finality, at most
//! one proxy crash (with failover) and, for RBP, at most one branch cut.
//! Time is abstract, so the search covers every ordering the timed
//! simulation could produce.
//!
//! [`crash_sweep`] complements it on the timed simulation: a proxy crash
//! after each event index of a one-transaction run.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use core::hash::BuildHasherDefault;

use fnv::FnvHasher;
use hashbrown::HashSet;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainId, EntityId, Leg, Ledger, TransactionRequest, TxnId};
use crate::config::RunConfig;
use crate::metrics::{audit_acid, check_latency_bound, check_message_bound, DerivedBounds};
use crate::protocol::{
    CoordConfig, CoordInput, CoordPhase, CoordinatorState, Effect, Message, MsgKind, PartCtx, PartEffect,
    PartInput, ParticipantState, ProtocolKind, StepError,
};
use crate::sim::{RunUntil, Simulation};
use crate::time::{Dur, Time};
use crate::trace::Outcome;

const TXN: TxnId = TxnId(1);
const COORD: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub protocol: ProtocolKind,
    pub max_crashes: u32,
    /// Branch cuts of an included, unfinalized leg (RBP recycle path).
    pub max_cuts: u32,
    /// Coordinator retry budget (the failure budget in the timed model).
    pub max_retries: u32,
    /// Whether the payer can cover the transfer.
    pub funded: bool,
    /// Whether the payee's entity is already locked by another transaction.
    pub payee_locked: bool,
    /// Let coordinator deadlines fire at any point. Otherwise a deadline
    /// fires only when no message, block or restart can make progress.
    pub early_timeouts: bool,
}

impl ExploreConfig {
    pub fn civil(protocol: ProtocolKind) -> ExploreConfig {
        ExploreConfig { protocol, max_crashes: 0, max_cuts: 0, max_retries: 0, funded: true, payee_locked: false, early_timeouts: false }
    }

    pub fn with_crash(protocol: ProtocolKind) -> ExploreConfig {
        ExploreConfig { max_crashes: 1, max_retries: 1, ..ExploreConfig::civil(protocol) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExploreViolation {
    /// One leg reached the chain and the other did not.
    PartialCommit,
    /// No action is enabled but the transaction is not finished.
    Deadlock { coordinator: CoordPhase },
    /// The coordinator committed under SBP before both legs were final.
    CommittedBeforeFinal,
    LockLeak,
    BalanceChanged,
    /// Committed outcome disagrees with the legs' application.
    OutcomeMismatch,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub states: u64,
    pub transitions: u64,
    pub terminal_states: u64,
    pub committed_terminals: u64,
    pub aborted_terminals: u64,
    /// Inputs a machine rejected as unexpected (not stale epochs).
    pub rejected_inputs: u64,
    pub violations: Vec<ExploreViolation>,
    /// The search stopped at the state limit before covering everything.
    pub truncated: bool,
}

impl ExploreReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty() && self.terminal_states > 0 && !self.truncated
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum LegState {
    None,
    Mempool,
    Included,
    Final,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct World {
    started: bool,
    coord: CoordinatorState,
    parts: [ParticipantState; 2],
    ledgers: [Ledger; 2],
    /// Messages in flight as (from chain slot, to chain slot, message),
    /// kept sorted so equal multisets compare equal.
    in_flight: Vec<(u8, u8, Message)>,
    timers: BTreeSet<(u32, u32)>,
    legs: [LegState; 2],
    in_window: [bool; 2],
    restart_pending: bool,
    down: Option<u8>,
    crashes: u32,
    cuts: u32,
}

const PAYER_BALANCE: u64 = 50;
const AMOUNT: i64 = 20;

fn initial(cfg: &ExploreConfig) -> World {
    let chains = [ChainId(1), ChainId(2)];
    let entity = |i: usize| EntityId { chain: chains[i], account: 0 };
    let payer_funds = if cfg.funded { PAYER_BALANCE } else { (AMOUNT - 1) as u64 };
    let mut payee = Ledger::new(chains[1], 1, PAYER_BALANCE);
    if cfg.payee_locked {
        payee.lock(entity(1), TxnId(99)).expect("fresh ledger");
    }
    World {
        started: false,
        coord: CoordinatorState::new(TXN, chains.to_vec()),
        parts: [
            ParticipantState::new(TXN, chains[COORD], entity(0), -AMOUNT),
            ParticipantState::new(TXN, chains[COORD], entity(1), AMOUNT),
        ],
        ledgers: [Ledger::new(chains[0], 1, payer_funds), payee],
        in_flight: Vec::new(),
        timers: BTreeSet::new(),
        legs: [LegState::None; 2],
        in_window: [false; 2],
        restart_pending: false,
        down: None,
        crashes: 0,
        cuts: 0,
    }
}

#[derive(Clone, Copy, Debug)]
enum Move {
    Start,
    Deliver(usize),
    Timeout(u32, u32),
    Restart,
    Include(usize),
    Finalize(usize),
    Cut(usize),
    Crash(usize),
    Failover,
}

fn slot_of(c: ChainId) -> usize {
    c.slot()
}

struct Explorer {
    cfg: ExploreConfig,
    coord_cfg: CoordConfig,
    report: ExploreReport,
}

impl Explorer {
    fn up(w: &World, chain: usize) -> bool {
        w.down != Some(chain as u8)
    }

    fn moves(&self, w: &World) -> Vec<Move> {
        let mut out = Vec::new();
        if !w.started {
            if Self::up(w, COORD) {
                out.push(Move::Start);
            }
        } else {
            let mut seen = BTreeSet::new();
            for (i, m) in w.in_flight.iter().enumerate() {
                // Identical messages are interchangeable.
                if Self::up(w, m.1 as usize) && seen.insert(*m) {
                    out.push(Move::Deliver(i));
                }
            }
            if Self::up(w, COORD) && w.restart_pending {
                out.push(Move::Restart);
            }
            for c in 0..2 {
                match w.legs[c] {
                    LegState::Mempool => out.push(Move::Include(c)),
                    LegState::Included => {
                        if Self::up(w, c) {
                            out.push(Move::Finalize(c));
                        }
                        if w.cuts < self.cfg.max_cuts {
                            out.push(Move::Cut(c));
                        }
                    }
                    _ => {}
                }
            }
            if Self::up(w, COORD) && (self.cfg.early_timeouts || out.is_empty()) {
                for &(inc, att) in &w.timers {
                    out.push(Move::Timeout(inc, att));
                }
            }
        }
        if w.down.is_some() {
            out.push(Move::Failover);
        } else if w.crashes < self.cfg.max_crashes && !self.finished(w) {
            out.push(Move::Crash(0));
            out.push(Move::Crash(1));
        }
        out
    }

    fn finished(&self, w: &World) -> bool {
        w.started && w.coord.phase.is_terminal() && !w.coord.recycle_pending && w.in_flight.is_empty()
    }

    fn send(w: &mut World, from: usize, to: ChainId, msg: Message) {
        let entry = (from as u8, slot_of(to) as u8, msg);
        let at = w.in_flight.partition_point(|e| *e <= entry);
        w.in_flight.insert(at, entry);
    }

    fn coord_step(&mut self, w: &mut World, input: CoordInput) {
        let effects = match w.coord.step(input, Time::ZERO, &self.coord_cfg) {
            Ok(e) => e,
            Err(StepError::StaleEpoch { .. }) => return,
            Err(_) => {
                self.report.rejected_inputs += 1;
                return;
            }
        };
        for e in effects {
            match e {
                Effect::Send { to, msg } => Self::send(w, COORD, to, msg),
                Effect::SetTimer { incarnation, attempt, .. } => {
                    // A superseded deadline is a no-op for the machine.
                    w.timers.clear();
                    // Bound the search: a restarted coordinator retries
                    // without limit in the timed model.
                    if attempt <= self.coord_cfg.max_retries + 1 {
                        w.timers.insert((incarnation, attempt));
                    }
                }
                Effect::Recycle => w.restart_pending = true,
                Effect::Committed | Effect::Aborted | Effect::Restarted { .. } => {}
            }
        }
        if w.coord.phase.is_terminal() || w.coord.phase == CoordPhase::CommitSent {
            w.timers.clear();
        }
    }

    fn part_step(&mut self, w: &mut World, c: usize, input: PartInput) {
        let ctx = PartCtx {
            now: Time::ZERO,
            kind: self.cfg.protocol,
            delta: Dur::from_secs(1),
            fixed_wait: false,
            leg_pending: w.legs[c] != LegState::None,
        };
        let effects = match w.parts[c].step(&mut w.ledgers[c], input, &ctx) {
            Ok(e) => e,
            Err(StepError::StaleEpoch { .. }) => return,
            Err(_) => {
                self.report.rejected_inputs += 1;
                return;
            }
        };
        for e in effects {
            match e {
                PartEffect::Reply(msg) => Self::send(w, c, ChainId(1), msg),
                PartEffect::SubmitLeg => {
                    if w.legs[c] == LegState::None {
                        w.legs[c] = LegState::Mempool;
                    }
                }
                PartEffect::WindowInsert(_) => w.in_window[c] = true,
                PartEffect::Replicate | PartEffect::WaitUntil(_) => {}
            }
        }
    }

    fn apply(&mut self, w: &World, m: Move) -> World {
        let mut w = w.clone();
        match m {
            Move::Start => {
                w.started = true;
                self.coord_step(&mut w, CoordInput::Start);
            }
            Move::Deliver(i) => {
                let (from, to, msg) = w.in_flight.remove(i);
                let from = ChainId::from_slot(from as usize);
                match msg.kind {
                    MsgKind::Precommit | MsgKind::Commit | MsgKind::Abort => {
                        self.part_step(&mut w, to as usize, PartInput::Deliver(msg))
                    }
                    _ => self.coord_step(&mut w, CoordInput::Deliver { from, msg }),
                }
            }
            Move::Timeout(incarnation, attempt) => {
                w.timers.remove(&(incarnation, attempt));
                self.coord_step(&mut w, CoordInput::Timeout { incarnation, attempt });
            }
            Move::Restart => {
                w.restart_pending = false;
                self.coord_step(&mut w, CoordInput::Restart);
            }
            Move::Include(c) => w.legs[c] = LegState::Included,
            Move::Finalize(c) => {
                w.legs[c] = LegState::Final;
                w.in_window[c] = false;
                self.part_step(&mut w, c, PartInput::Finalized);
            }
            Move::Cut(c) => {
                w.cuts += 1;
                w.legs[c] = LegState::Mempool;
                if self.cfg.protocol == ProtocolKind::Rbp && w.in_window[c] {
                    let msg = Message::new(MsgKind::Recycle, TXN, w.parts[c].incarnation, 0);
                    Self::send(&mut w, c, ChainId(1), msg);
                }
            }
            Move::Crash(c) => {
                w.down = Some(c as u8);
                w.crashes += 1;
                w.coord.note_failure();
            }
            Move::Failover => w.down = None,
        }
        w
    }

    fn check_state(&mut self, w: &World) {
        if self.cfg.protocol == ProtocolKind::Sbp
            && w.coord.phase == CoordPhase::Committed
            && w.legs.iter().any(|l| *l != LegState::Final)
        {
            self.violation(ExploreViolation::CommittedBeforeFinal);
        }
    }

    fn check_terminal(&mut self, w: &World) {
        self.report.terminal_states += 1;
        if !self.finished(w) || w.parts.iter().any(|p| p.phase.is_open()) {
            self.violation(ExploreViolation::Deadlock { coordinator: w.coord.phase });
            return;
        }
        let on_chain = w.legs.map(|l| l == LegState::Final);
        let applied = w.parts.clone().map(|p| p.applied);
        if on_chain[0] != on_chain[1] || applied[0] != applied[1] {
            self.violation(ExploreViolation::PartialCommit);
        }
        let committed = w.coord.phase == CoordPhase::Committed;
        if committed != on_chain[0] || committed != applied[0] {
            self.violation(ExploreViolation::OutcomeMismatch);
        }
        if committed {
            self.report.committed_terminals += 1;
        } else {
            self.report.aborted_terminals += 1;
        }
        let foreign = usize::from(self.cfg.payee_locked);
        if w.ledgers[0].locked_count() + w.ledgers[1].locked_count() != foreign {
            self.violation(ExploreViolation::LockLeak);
        }
        let start = initial(&self.cfg);
        if w.ledgers[0].total() + w.ledgers[1].total() != start.ledgers[0].total() + start.ledgers[1].total() {
            self.violation(ExploreViolation::BalanceChanged);
        }
    }

    fn violation(&mut self, v: ExploreViolation) {
        if !self.report.violations.contains(&v) {
            self.report.violations.push(v);
        }
    }
}

/// States visited before giving up.
pub const STATE_LIMIT: u64 = 2_000_000;

/// Depth-first search over all reachable states.
pub fn explore(cfg: &ExploreConfig) -> ExploreReport {
    let mut ex = Explorer {
        cfg: *cfg,
        coord_cfg: CoordConfig { timeout: Dur::from_secs(1), max_retries: cfg.max_retries },
        report: ExploreReport::default(),
    };
    let start = initial(cfg);
    let mut seen: HashSet<World, BuildHasherDefault<FnvHasher>> = HashSet::default();
    seen.insert(start.clone());
    let mut stack = alloc::vec![start];
    while let Some(w) = stack.pop() {
        ex.report.states += 1;
        if ex.report.states > STATE_LIMIT {
            ex.report.truncated = true;
            break;
        }
        ex.check_state(&w);
        let moves = ex.moves(&w);
        if moves.is_empty() {
            ex.check_terminal(&w);
            continue;
        }
        for m in moves {
            ex.report.transitions += 1;
            let next = ex.apply(&w, m);
            if seen.insert(next.clone()) {
                stack.push(next);
            }
        }
    }
    ex.report
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: u64,
    pub committed: u64,
    pub aborted: u64,
    /// Runs where the crash hit before the transaction finished.
    pub crashes_in_flight: u64,
    /// Longest time from a proxy crash to a replacement taking over.
    pub worst_takeover: Dur,
    pub failures: Vec<SweepFailure>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub event_index: u64,
    pub chain: ChainId,
    pub reason: SweepReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepReason {
    Audit,
    Unfinished,
    /// The replacement proxy took over later than two heartbeat intervals.
    SlowTakeover,
    MessageBound,
    LatencyBound,
    /// The simulation itself failed, with its error message.
    Sim(String),
}

impl SweepReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty() && self.runs > 0
    }
}

/// The one-transaction, two-chain configuration used by the sweep.
pub fn sweep_config(protocol: ProtocolKind) -> (RunConfig, Vec<TransactionRequest>) {
    let cfg = RunConfig {
        protocol,
        n_chains: 2,
        nodes_per_chain: 2,
        entities_per_chain: 1,
        n_transactions: 1,
        failure_budget: 1,
        ..RunConfig::default()
    };
    let leg = |c: u32, delta: i64| Leg { chain: ChainId(c), entity: EntityId { chain: ChainId(c), account: 0 }, delta };
    let req = TransactionRequest {
        uuid: TXN,
        coordinator: ChainId(1),
        legs: alloc::vec![leg(1, -AMOUNT), leg(2, AMOUNT)],
        submit_time: Time::ZERO,
    };
    (cfg, alloc::vec![req])
}

/// Crashes the proxy of each chain after each event index of the
/// crash-free run, and checks every resulting run.
pub fn crash_sweep(cfg: &RunConfig, workload: &[TransactionRequest]) -> SweepReport {
    let mut report = SweepReport::default();
    let baseline = match Simulation::with_workload(cfg, workload.to_vec()).and_then(|s| s.run(RunUntil::Quiescence)) {
        Ok(t) => t,
        Err(e) => {
            report.failures.push(SweepFailure { event_index: 0, chain: ChainId(1), reason: SweepReason::Sim(e.to_string()) });
            return report;
        }
    };
    let sigma = cfg.chains().map(|c| cfg.chain_params(c).sigma).max().unwrap_or(Dur::ZERO);
    for index in 1..=baseline.events_processed {
        for chain in cfg.chains() {
            report.runs += 1;
            let fail = |reason| SweepFailure { event_index: index, chain, reason };
            let mut sim = match Simulation::with_workload(cfg, workload.to_vec()) {
                Ok(s) => s,
                Err(e) => {
                    report.failures.push(fail(SweepReason::Sim(e.to_string())));
                    continue;
                }
            };
            sim.crash_proxy_after_event(index, chain);
            let trace = match sim.run(RunUntil::Quiescence) {
                Ok(t) => t,
                Err(e) => {
                    report.failures.push(fail(SweepReason::Sim(e.to_string())));
                    continue;
                }
            };
            if !audit_acid(&trace).pass() {
                report.failures.push(fail(SweepReason::Audit));
            }
            if !trace.quiescent || trace.txns.iter().any(|t| t.outcome == Outcome::Unfinished) {
                report.failures.push(fail(SweepReason::Unfinished));
            }
            for c in &trace.crashes {
                if !c.affected.is_empty() {
                    report.crashes_in_flight += 1;
                }
                if let Some(r) = c.replaced_at {
                    let took = r - c.at;
                    report.worst_takeover = report.worst_takeover.max(took);
                    if cfg.protocol.uses_failover() && c.was_proxy && took > sigma * 2 {
                        report.failures.push(fail(SweepReason::SlowTakeover));
                    }
                }
            }
            let bounds = DerivedBounds::from_chains(trace.chains.iter().map(|c| &c.params));
            for t in &trace.txns {
                if check_message_bound(&t.metrics, &bounds).is_err() {
                    report.failures.push(fail(SweepReason::MessageBound));
                }
                if cfg.protocol == ProtocolKind::Sbp
                    && check_latency_bound(&t.metrics, &bounds, trace.tau_max, trace.recovery).is_err()
                {
                    report.failures.push(fail(SweepReason::LatencyBound));
                }
                match t.outcome {
                    Outcome::Committed => report.committed += 1,
                    Outcome::Aborted => report.aborted += 1,
                    Outcome::Unfinished => {}
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn civil_sbp_always_commits() {
        let r = explore(&ExploreConfig::civil(ProtocolKind::Sbp));
        assert!(r.pass(), "{r:?}");
        assert_eq!(r.aborted_terminals, 0);
        assert!(r.committed_terminals > 0);
    }

    #[test]
    fn unfunded_or_locked_always_aborts() {
        for cfg in [
            ExploreConfig { funded: false, ..ExploreConfig::with_crash(ProtocolKind::Sbp) },
            ExploreConfig { payee_locked: true, ..ExploreConfig::with_crash(ProtocolKind::Sbp) },
        ] {
            let r = explore(&cfg);
            assert!(r.pass(), "{r:?}");
            assert_eq!(r.committed_terminals, 0);
        }
    }

    #[test]
    fn one_crash_never_splits_sbp() {
        for early_timeouts in [false, true] {
            let r = explore(&ExploreConfig { early_timeouts, ..ExploreConfig::with_crash(ProtocolKind::Sbp) });
            assert!(r.pass(), "{r:?}");
            assert!(r.committed_terminals > 0 && r.aborted_terminals > 0);
        }
    }

    #[test]
    fn early_timeouts_abort_civil_runs_safely() {
        let r = explore(&ExploreConfig { early_timeouts: true, ..ExploreConfig::civil(ProtocolKind::Sbp) });
        assert!(r.pass(), "{r:?}");
        assert!(r.aborted_terminals > 0);
    }

    #[test]
    fn rbp_with_crash_and_cut_stays_atomic() {
        let cfg = ExploreConfig { max_cuts: 1, ..ExploreConfig::with_crash(ProtocolKind::Rbp) };
        let r = explore(&cfg);
        assert!(r.pass(), "{r:?}");
        let early = explore(&ExploreConfig { early_timeouts: true, max_cuts: 0, ..cfg });
        assert!(early.pass(), "{early:?}");
    }

    #[test]
    fn tpc_civil() {
        let r = explore(&ExploreConfig::civil(ProtocolKind::Tpc));
        assert!(r.pass(), "{r:?}");
    }

    #[test]
    fn timed_sweep_sbp() {
        let (cfg, w) = sweep_config(ProtocolKind::Sbp);
        let r = crash_sweep(&cfg, &w);
        assert!(r.pass(), "{:?}", r.failures);
        assert!(r.crashes_in_flight > 0);
    }
}

//! The simulation: chains, protocol machines and the network wired to one
//! event queue.
//!
//! Protocol state is replicated within a chain, so any live proxy can act on
//! it. Inputs that reach a chain whose proxy is down wait in a per-chain
//! backlog until a proxy is available again: either a newly elected one
//! (SBP and RBP fail over) or the recovered node itself.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use core::hash::{Hash, Hasher};

use fnv::FnvHasher;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chain::{ChainId, Ledger, LedgerError, NodeId, RequestError, TransactionRequest, TxnId};
use crate::config::{ConfigError, RunConfig};
use crate::kernel::{BudgetExhausted, Envelope, EventQueue, FailureBudget, Network, Payload, TimerKind};
use crate::metrics::TxnMetrics;
use crate::node::ChainNode;
use crate::protocol::{
    CoordConfig, CoordInput, CoordPhase, CoordinatorState, Effect, HubEffect, HubState, Message, MsgKind,
    PartCtx, PartEffect, PartInput, ParticipantState, Phase, ProtocolKind, RequestPool, SlidingWindow,
    StepError,
};
use crate::time::{Dur, Time};
use crate::trace::{
    Anomaly, ChainSummary, CrashRecord, DeliveryRecord, LegTrace, LockViolation, Outcome, RunTrace, TxnTrace, WindowSample,
};
use crate::workload::{generate_workload, rng_for, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunUntil {
    Quiescence,
    /// Stop before the first event later than this time.
    Time(Time),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("livelock: {events} events without a transaction completing")]
    LivelockDetected { events: u64, completed: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error("transaction {0} names chain {1}, which does not exist")]
    UnknownChain(TxnId, ChainId),
    #[error("transaction id {0} appears twice")]
    DuplicateTxn(TxnId),
}

/// Work for a chain that needs its proxy.
#[derive(Clone, Copy, Debug)]
enum Action {
    Deliver(Envelope),
    Coord(TxnId, CoordInput),
    Part(TxnId, ChainId, PartInput),
    Arrive(TxnId),
    /// Tell the coordinator a leg on this chain was cut.
    ReportCut(TxnId, ChainId),
}

struct TxnRec {
    request: TransactionRequest,
    /// Chain running the coordinator (the hub under HUB).
    host: ChainId,
    coord: Option<CoordinatorState>,
    parts: BTreeMap<ChainId, ParticipantState>,
    applied_at: BTreeMap<ChainId, Time>,
    metrics: TxnMetrics,
    recycled_after_commit: u32,
    arrived: bool,
    /// HUB: the requester heard the outcome.
    acked: Option<bool>,
}

impl TxnRec {
    fn settled(&self, protocol: ProtocolKind) -> bool {
        let Some(c) = &self.coord else { return false };
        if !c.phase.is_terminal() || c.recycle_pending {
            return false;
        }
        if self.parts.values().any(|p| p.phase.is_open()) {
            return false;
        }
        protocol != ProtocolKind::Hub || self.acked.is_some()
    }

    fn outcome(&self, protocol: ProtocolKind) -> Outcome {
        let decided = match protocol {
            ProtocolKind::Hub => self.acked,
            _ => self.coord.as_ref().and_then(|c| match c.phase {
                CoordPhase::Committed => Some(true),
                CoordPhase::Aborted => Some(false),
                _ => None,
            }),
        };
        match decided {
            Some(true) if self.metrics.commit.is_some() => Outcome::Committed,
            Some(false) => Outcome::Aborted,
            _ if self.metrics.commit.is_some() => Outcome::Committed,
            _ => Outcome::Unfinished,
        }
    }
}

pub struct Simulation {
    cfg: RunConfig,
    protocol: ProtocolKind,
    now: Time,
    queue: EventQueue,
    net: Network,
    chains: Vec<ChainNode>,
    ledgers: Vec<Ledger>,
    initial_balances: Vec<Vec<u64>>,
    windows: Vec<SlidingWindow>,
    backlog: Vec<VecDeque<Action>>,
    txns: Vec<TxnRec>,
    index: BTreeMap<TxnId, usize>,
    /// Unsettled transactions touching each chain.
    touching: Vec<BTreeSet<TxnId>>,
    unsettled: BTreeSet<TxnId>,
    pool: RequestPool,
    hub: HubState,
    coord_cfg: CoordConfig,
    budget: FailureBudget,
    failure_rng: ChaCha8Rng,
    next_arrival: usize,
    events: u64,
    events_since_completion: u64,
    completed: u64,
    digest: FnvHasher,
    crash_after_event: Option<(u64, ChainId)>,
    crashes: Vec<CrashRecord>,
    crashes_refused: u32,
    lock_violations: Vec<LockViolation>,
    anomalies: Vec<Anomaly>,
    heartbeat_idle: u64,
    heartbeat_attributed: u64,
    window_samples: Vec<WindowSample>,
    deliveries: Option<Vec<DeliveryRecord>>,
}

impl Simulation {
    pub fn new(cfg: &RunConfig) -> Result<Simulation, SimError> {
        cfg.validate()?;
        Simulation::with_workload(cfg, generate_workload(cfg))
    }

    pub fn with_workload(cfg: &RunConfig, requests: Vec<TransactionRequest>) -> Result<Simulation, SimError> {
        cfg.validate()?;
        let protocol = cfg.protocol;
        let chains: Vec<ChainNode> = cfg
            .all_chain_params()
            .into_iter()
            .map(|p| ChainNode::new(p, rng_for(cfg.seed, Stream::ChainBase as u64 + p.chain.0 as u64)))
            .collect();
        let ledgers: Vec<Ledger> =
            cfg.chains().map(|c| Ledger::new(c, cfg.entities_per_chain, cfg.initial_balance)).collect();
        let initial_balances = ledgers.iter().map(|l| l.balances().to_vec()).collect();

        let mut index = BTreeMap::new();
        let mut txns = Vec::with_capacity(requests.len());
        for (i, request) in requests.into_iter().enumerate() {
            request.validate()?;
            let known = |c: &ChainId| c.0 >= 1 && c.0 <= cfg.n_chains;
            if let Some(bad) = request.chains().into_iter().chain([request.coordinator]).find(|c| !known(c)) {
                return Err(SimError::UnknownChain(request.uuid, bad));
            }
            if index.insert(request.uuid, i).is_some() {
                return Err(SimError::DuplicateTxn(request.uuid));
            }
            let host = if protocol == ProtocolKind::Hub { ChainId(1) } else { request.coordinator };
            let mut metrics = TxnMetrics::new(request.uuid, protocol, request.submit_time);
            let mut involved: Vec<ChainId> = request.chains();
            if !involved.contains(&host) {
                involved.push(host);
            }
            if protocol == ProtocolKind::Hub && !involved.contains(&request.coordinator) {
                involved.push(request.coordinator);
            }
            metrics.chains = involved.len() as u32;
            metrics.nodes = involved.iter().map(|c| cfg.chain_params(*c).n_nodes).sum();
            txns.push(TxnRec {
                request,
                host,
                coord: None,
                parts: BTreeMap::new(),
                applied_at: BTreeMap::new(),
                metrics,
                recycled_after_commit: 0,
                arrived: false,
                acked: None,
            });
        }
        txns.sort_by_key(|t| (t.request.submit_time, t.request.uuid));
        for (i, t) in txns.iter().enumerate() {
            index.insert(t.request.uuid, i);
        }

        let sigma_max = chains.iter().map(|c| c.params.sigma).max().unwrap_or(Dur::ZERO);
        let params = cfg.sim_params();
        let coord_cfg = CoordConfig {
            timeout: params.max_latency() * 2 + sigma_max * 2 + cfg.recovery,
            max_retries: cfg.failure_budget,
        };
        let n = cfg.n_chains as usize;
        let mut sim = Simulation {
            cfg: cfg.clone(),
            protocol,
            now: Time::ZERO,
            queue: EventQueue::new(),
            net: Network::new(params, rng_for(cfg.seed, Stream::Network as u64)),
            chains,
            ledgers,
            initial_balances,
            windows: cfg.chains().map(SlidingWindow::new).collect(),
            backlog: (0..n).map(|_| VecDeque::new()).collect(),
            txns,
            index,
            touching: (0..n).map(|_| BTreeSet::new()).collect(),
            unsettled: BTreeSet::new(),
            pool: RequestPool::new(),
            hub: HubState::new(ChainId(1), cfg.hub_capacity as usize),
            coord_cfg,
            budget: FailureBudget { per_txn: cfg.failure_budget },
            failure_rng: rng_for(cfg.seed, Stream::Failures as u64),
            next_arrival: 0,
            events: 0,
            events_since_completion: 0,
            completed: 0,
            digest: FnvHasher::default(),
            crash_after_event: None,
            crashes: Vec::new(),
            crashes_refused: 0,
            lock_violations: Vec::new(),
            anomalies: Vec::new(),
            heartbeat_idle: 0,
            heartbeat_attributed: 0,
            window_samples: Vec::new(),
            deliveries: None,
        };
        sim.schedule_next_arrival();
        if protocol.uses_failover() {
            for c in &sim.chains {
                sim.queue.push(Time::ZERO + c.params.sigma, Payload::TimerFire(TimerKind::Heartbeat(c.chain())));
            }
        }
        if cfg.crash_rate > 0.0 && cfg.failure_budget > 0 {
            let at = sim.next_crash_arrival(Time::ZERO);
            sim.queue.push(at, Payload::TimerFire(TimerKind::CrashArrival));
        }
        if cfg.window_sample > Dur::ZERO && protocol == ProtocolKind::Rbp {
            sim.queue.push(Time::ZERO + cfg.window_sample, Payload::TimerFire(TimerKind::WindowSample));
        }
        Ok(sim)
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn chain(&self, c: ChainId) -> &ChainNode {
        &self.chains[c.slot()]
    }

    pub fn ledger(&self, c: ChainId) -> &Ledger {
        &self.ledgers[c.slot()]
    }

    pub fn window(&self, c: ChainId) -> &SlidingWindow {
        &self.windows[c.slot()]
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    /// Schedules a crash of `node` at `at`. Refused if a transaction in flight
    /// on the node's chain has used up its failure budget; the budget is
    /// checked again when the crash fires.
    pub fn inject_crash(&mut self, node: NodeId, at: Time) -> Result<(), BudgetExhausted> {
        let used: Vec<u32> = self.in_flight_on(node.chain).iter().map(|t| self.rec(*t).metrics.failures()).collect();
        self.budget.admit(used)?;
        self.queue.push(at.max(self.now), Payload::NodeCrash(node));
        Ok(())
    }

    /// Keep a record of every handled message in the trace.
    pub fn record_deliveries(&mut self) {
        self.deliveries.get_or_insert_with(Vec::new);
    }

    /// Crashes the proxy of `chain` right after the `index`-th processed event.
    pub fn crash_proxy_after_event(&mut self, index: u64, chain: ChainId) {
        self.crash_after_event = Some((index, chain));
    }

    fn rec(&self, t: TxnId) -> &TxnRec {
        &self.txns[self.index[&t]]
    }

    fn rec_mut(&mut self, t: TxnId) -> &mut TxnRec {
        let i = self.index[&t];
        &mut self.txns[i]
    }

    fn in_flight_on(&self, chain: ChainId) -> Vec<TxnId> {
        self.touching[chain.slot()].iter().copied().collect()
    }

    fn schedule_next_arrival(&mut self) {
        if let Some(t) = self.txns.get(self.next_arrival) {
            let at = t.request.submit_time;
            self.queue.push(at, Payload::WorkloadArrival(self.next_arrival as u32));
            self.next_arrival += 1;
        }
    }

    fn next_crash_arrival(&mut self, now: Time) -> Time {
        let u: f64 = self.failure_rng.gen();
        now + Dur::from_secs_f64(-libm::log(1.0 - u) / self.cfg.crash_rate)
    }

    fn quiescent(&self) -> bool {
        self.next_arrival >= self.txns.len()
            && self.txns.last().is_none_or(|t| t.arrived)
            && self.unsettled.is_empty()
            && self.net.in_flight() == 0
            && self.pool.is_empty()
            && self.hub.is_idle()
            && self.backlog.iter().all(|b| b.is_empty())
            && self.chains.iter().all(|c| c.is_idle())
    }

    pub fn run(mut self, until: RunUntil) -> Result<RunTrace, SimError> {
        let per_thousand = (self.txns.len() as u64).div_ceil(1000).max(1);
        let cap = self.cfg.livelock_cap.saturating_mul(per_thousand);
        while !self.quiescent() {
            let Some(next) = self.queue.peek_time() else { break };
            if let RunUntil::Time(limit) = until {
                if next > limit {
                    break;
                }
            }
            self.step_event();
            if self.events_since_completion > cap {
                return Err(SimError::LivelockDetected { events: self.events_since_completion, completed: self.completed });
            }
        }
        Ok(self.into_trace())
    }

    /// Processes one event. Returns false when the queue is empty.
    pub fn step_event(&mut self) -> bool {
        let Some(ev) = self.queue.pop() else { return false };
        self.now = ev.fire_at;
        self.events += 1;
        self.events_since_completion += 1;
        ev.fire_at.hash(&mut self.digest);
        ev.sequence.hash(&mut self.digest);
        ev.payload.hash(&mut self.digest);
        match ev.payload {
            Payload::MessageDelivery(env) => self.at_chain(env.to.chain, Action::Deliver(env)),
            Payload::WorkloadArrival(i) => self.on_arrival(i as usize),
            Payload::BlockProduce(c) => self.on_produce(c),
            Payload::NodeCrash(node) => {
                self.crash_node(node, true);
            }
            Payload::NodeRecover(node) => self.on_recover(node),
            Payload::TimerFire(kind) => self.on_timer(kind),
        }
        if let Some((i, chain)) = self.crash_after_event {
            if i == self.events {
                self.crash_after_event = None;
                let proxy = self.chains[chain.slot()].proxy.current_proxy;
                self.crash_node(proxy, true);
            }
        }
        true
    }

    fn on_arrival(&mut self, i: usize) {
        let uuid = self.txns[i].request.uuid;
        self.schedule_next_arrival();
        self.txns[i].arrived = true;
        self.set_unsettled(uuid, true);
        let req = self.txns[i].request.clone();
        self.pool.push(req);
        self.drain_pool();
    }

    fn drain_pool(&mut self) {
        while let Some(p) = self.pool.pop() {
            let uuid = p.request.uuid;
            let rec = self.rec(uuid);
            match &rec.coord {
                Some(c) if c.recycle_pending => {
                    let host = rec.host;
                    self.rec_mut(uuid).metrics.recycle_count = p.recycle_count;
                    self.at_chain(host, Action::Coord(uuid, CoordInput::Restart));
                }
                Some(_) => {}
                None => {
                    let requester = p.request.coordinator;
                    self.at_chain(requester, Action::Arrive(uuid));
                }
            }
        }
    }

    /// Runs `action` now if the chain has a live proxy, else backlogs it.
    fn at_chain(&mut self, chain: ChainId, action: Action) {
        if self.chains[chain.slot()].endpoint_available() {
            self.execute(chain, action);
        } else {
            self.backlog[chain.slot()].push_back(action);
        }
    }

    fn flush_backlog(&mut self, chain: ChainId) {
        while self.chains[chain.slot()].endpoint_available() {
            let Some(a) = self.backlog[chain.slot()].pop_front() else { break };
            self.execute(chain, a);
        }
    }

    fn execute(&mut self, chain: ChainId, action: Action) {
        match action {
            Action::Deliver(env) => self.on_deliver(env),
            Action::Coord(t, input) => self.run_coordinator(t, input),
            Action::Part(t, c, input) => self.run_participant(t, c, input, Phase::Two),
            Action::Arrive(t) => self.start(t),
            Action::ReportCut(t, c) => {
                let incarnation = self.rec(t).parts.get(&c).map_or(0, |p| p.incarnation);
                let host = self.rec(t).host;
                self.send(t, c, host, Message::new(MsgKind::Recycle, t, incarnation, 0));
            }
        }
        debug_assert!(chain.0 >= 1);
    }

    fn count(&mut self, t: TxnId, phase: Phase, n: u64) {
        if n > 0 {
            self.rec_mut(t).metrics.count(phase, n);
        }
    }

    /// Intra-chain replication of a state change to the other live nodes.
    fn replicate(&mut self, t: TxnId, chain: ChainId, phase: Phase) {
        let n = self.chains[chain.slot()].live_count().saturating_sub(1) as u64;
        self.count(t, phase, n);
    }

    fn send(&mut self, t: TxnId, from: ChainId, to: ChainId, msg: Message) {
        let src = self.chains[from.slot()].proxy.current_proxy;
        let dst = self.chains[to.slot()].proxy.current_proxy;
        let env = self.net.send(&mut self.queue, self.now, src, dst, msg);
        if !env.is_local() {
            self.count(t, msg.kind.phase(), 1);
        }
    }

    fn start(&mut self, t: TxnId) {
        let rec = self.rec(t);
        let requester = rec.request.coordinator;
        let host = rec.host;
        if self.protocol == ProtocolKind::Hub {
            self.send(t, requester, host, Message::new(MsgKind::HubForward, t, 0, 0));
        } else {
            self.create_machines(t);
            self.run_coordinator(t, CoordInput::Start);
        }
    }

    fn create_machines(&mut self, t: TxnId) {
        let rec = self.rec_mut(t);
        let chains = rec.request.chains();
        let host = rec.host;
        rec.coord = Some(CoordinatorState::new(t, chains));
        let legs = rec.request.legs.clone();
        for leg in legs {
            rec.parts.insert(leg.chain, ParticipantState::new(t, host, leg.entity, leg.delta));
        }
    }

    fn on_deliver(&mut self, env: Envelope) {
        self.net.delivered();
        let chain = env.to.chain;
        let t = env.msg.txn;
        let proxy = self.chains[chain.slot()].proxy.current_proxy;
        if env.to != proxy && !env.is_local() {
            // Addressed to a former proxy: one hop inside the chain.
            self.count(t, env.msg.kind.phase(), 1);
        }
        if let Some(log) = self.deliveries.as_mut() {
            log.push(DeliveryRecord {
                at: self.now,
                msg_id: env.msg_id,
                from: env.from,
                to: env.to,
                handled_by: proxy,
                kind: env.msg.kind,
                txn: t,
            });
        }
        let from = env.from.chain;
        match env.msg.kind {
            MsgKind::Precommit | MsgKind::Commit | MsgKind::Abort => {
                self.run_participant(t, chain, PartInput::Deliver(env.msg), env.msg.kind.phase())
            }
            MsgKind::Ready | MsgKind::AbortVote | MsgKind::Done | MsgKind::Recycle => {
                self.run_coordinator(t, CoordInput::Deliver { from, msg: env.msg })
            }
            MsgKind::HubForward => {
                let effects = self.hub.forward(t, from);
                self.apply_hub(effects);
            }
            MsgKind::HubAck => {
                let now = self.now;
                let rec = self.rec_mut(t);
                if rec.acked.is_none() {
                    rec.acked = Some(env.msg.committed);
                    if env.msg.committed {
                        rec.metrics.commit = Some(now);
                    } else {
                        rec.metrics.abort = Some(now);
                    }
                    self.note_completion();
                }
                self.refresh(t);
            }
            MsgKind::HbProbe | MsgKind::HbAck => {}
        }
    }

    fn apply_hub(&mut self, effects: Vec<HubEffect>) {
        let hub = self.hub.hub;
        for e in effects {
            match e {
                HubEffect::Start(t) => {
                    self.create_machines(t);
                    self.run_coordinator(t, CoordInput::Start);
                }
                HubEffect::Ack { to, txn, committed } => {
                    let mut msg = Message::new(MsgKind::HubAck, txn, 0, 0);
                    msg.committed = committed;
                    self.send(txn, hub, to, msg);
                }
            }
        }
    }

    fn note_completion(&mut self) {
        self.completed += 1;
        self.events_since_completion = 0;
    }

    fn run_coordinator(&mut self, t: TxnId, input: CoordInput) {
        let now = self.now;
        let cfg = self.coord_cfg;
        let rec = self.rec_mut(t);
        let host = rec.host;
        let Some(coord) = rec.coord.as_mut() else { return };
        let phase_before = coord.phase;
        let effects = match coord.step(input, now, &cfg) {
            Ok(e) => e,
            Err(StepError::StaleEpoch { .. }) => return,
            Err(e) => {
                self.anomaly(t, host, &e);
                return;
            }
        };
        for e in effects {
            match e {
                Effect::Send { to, msg } => self.send(t, host, to, msg),
                Effect::SetTimer { at, incarnation, attempt } => {
                    self.queue.push(at, Payload::TimerFire(TimerKind::Deadline { txn: t, incarnation, attempt }));
                }
                Effect::Committed => {
                    let hub = self.protocol == ProtocolKind::Hub;
                    let rec = self.rec_mut(t);
                    if !hub && rec.metrics.commit.is_none() {
                        rec.metrics.commit = Some(now);
                        self.note_completion();
                    }
                    if hub {
                        let effects = self.hub.finished(t, true);
                        self.apply_hub(effects);
                    }
                }
                Effect::Aborted => {
                    let hub = self.protocol == ProtocolKind::Hub;
                    if !hub {
                        self.rec_mut(t).metrics.abort = Some(now);
                        self.note_completion();
                    } else {
                        let effects = self.hub.finished(t, false);
                        self.apply_hub(effects);
                    }
                }
                Effect::Recycle => {
                    let rec = self.rec_mut(t);
                    if phase_before == CoordPhase::Committed {
                        rec.recycled_after_commit += 1;
                    }
                    let req = rec.request.clone();
                    self.set_unsettled(t, true);
                    self.pool.recycle(req);
                    self.drain_pool();
                }
                Effect::Restarted { .. } => {
                    self.rec_mut(t).metrics.messages_by_execution.push(0);
                }
            }
        }
        self.refresh(t);
    }

    fn run_participant(&mut self, t: TxnId, chain: ChainId, input: PartInput, phase: Phase) {
        let node = &self.chains[chain.slot()];
        let ctx = PartCtx {
            now: self.now,
            kind: self.protocol,
            delta: node.params.delta,
            fixed_wait: self.cfg.sbp_fixed_wait && self.protocol == ProtocolKind::Sbp,
            leg_pending: node.leg_pending(t),
        };
        let i = self.index[&t];
        let Some(part) = self.txns[i].parts.get_mut(&chain) else { return };
        let applied_before = part.applied;
        let result = part.step(&mut self.ledgers[chain.slot()], input, &ctx);
        let applied_now = part.applied && !applied_before;
        let effects = match result {
            Ok(e) => e,
            Err(StepError::StaleEpoch { .. }) => return,
            Err(StepError::Ledger(LedgerError::LockHeldByOther { holder })) => {
                self.lock_violations.push(LockViolation { txn: t, chain, holder, at: self.now });
                return;
            }
            Err(e) => {
                self.anomaly(t, chain, &e);
                return;
            }
        };
        if applied_now {
            self.txns[i].applied_at.insert(chain, self.now);
        }
        let host = self.txns[i].host;
        for e in effects {
            match e {
                PartEffect::Reply(msg) => self.send(t, chain, host, msg),
                PartEffect::Replicate => self.replicate(t, chain, phase),
                PartEffect::SubmitLeg => {
                    self.chains[chain.slot()].submit(t);
                    self.ensure_production(chain);
                }
                PartEffect::WindowInsert(at) => self.windows[chain.slot()].insert(t, at),
                PartEffect::WaitUntil(at) => {
                    self.queue.push(at, Payload::TimerFire(TimerKind::DoneWait { txn: t, chain }));
                }
            }
        }
        self.refresh(t);
    }

    fn anomaly(&mut self, t: TxnId, chain: ChainId, e: &StepError) {
        let code = match e {
            StepError::StaleEpoch { .. } => 0,
            StepError::UnknownTxn { .. } => 1,
            StepError::Unexpected(k) => 10 + k.code(),
            StepError::Ledger(_) => 2,
        };
        self.anomalies.push(Anomaly { txn: t, chain, at: self.now, code });
    }

    fn refresh(&mut self, t: TxnId) {
        let rec = self.rec(t);
        if rec.arrived && rec.settled(self.protocol) && self.unsettled.contains(&t) {
            self.set_unsettled(t, false);
        }
    }

    fn set_unsettled(&mut self, t: TxnId, on: bool) {
        let rec = self.rec(t);
        let mut involved = rec.request.chains();
        involved.push(rec.host);
        involved.push(rec.request.coordinator);
        for c in involved {
            if on {
                self.touching[c.slot()].insert(t);
            } else {
                self.touching[c.slot()].remove(&t);
            }
        }
        if on {
            self.unsettled.insert(t);
        } else {
            self.unsettled.remove(&t);
        }
    }

    fn ensure_production(&mut self, chain: ChainId) {
        let node = &mut self.chains[chain.slot()];
        if node.production_at.is_none() && node.mempool_len() > 0 && node.live_count() > 0 {
            let at = node.next_slot(self.now);
            node.production_at = Some(at);
            self.queue.push(at, Payload::BlockProduce(chain));
        }
    }

    fn on_produce(&mut self, chain: ChainId) {
        let now = self.now;
        let node = &mut self.chains[chain.slot()];
        node.production_at = None;
        let delta = node.params.delta;
        let Some(out) = node.produce_block(now) else { return };
        for b in &out.created {
            self.queue.push(now + delta, Payload::TimerFire(TimerKind::Finality { chain, block: *b }));
        }
        if self.protocol == ProtocolKind::Rbp {
            for &t in &out.cut {
                if self.windows[chain.slot()].take_cut(t) {
                    // Still unfinalized: keep tracking the re-included leg.
                    self.windows[chain.slot()].insert(t, now);
                    if self.index.contains_key(&t) {
                        self.at_chain(chain, Action::ReportCut(t, chain));
                    }
                }
            }
        }
        self.ensure_production(chain);
    }

    fn on_timer(&mut self, kind: TimerKind) {
        match kind {
            TimerKind::Deadline { txn, incarnation, attempt } => {
                let host = self.rec(txn).host;
                self.at_chain(host, Action::Coord(txn, CoordInput::Timeout { incarnation, attempt }));
            }
            TimerKind::Finality { chain, block } => {
                let now = self.now;
                let done = self.chains[chain.slot()].advance_finality(now, block);
                for t in done {
                    self.windows[chain.slot()].finalize(t);
                    if self.index.contains_key(&t) {
                        self.at_chain(chain, Action::Part(t, chain, PartInput::Finalized));
                    }
                }
            }
            TimerKind::DoneWait { txn, chain } => {
                self.at_chain(chain, Action::Part(txn, chain, PartInput::WaitElapsed));
            }
            TimerKind::Heartbeat(chain) => self.on_heartbeat(chain),
            TimerKind::CrashArrival => self.on_crash_arrival(),
            TimerKind::WindowSample => {
                let now = self.now;
                for (i, w) in self.windows.iter_mut().enumerate() {
                    let delta = self.chains[i].params.delta;
                    w.advance(now, delta);
                    self.window_samples.push(WindowSample { at: now, chain: ChainId::from_slot(i), size: w.len() as u32 });
                }
                self.queue.push(now + self.cfg.window_sample, Payload::TimerFire(TimerKind::WindowSample));
            }
        }
    }

    /// Heartbeat traffic goes to the smallest in-flight transaction blocked
    /// on the chain, or to the idle overhead counter.
    fn attribute_heartbeat(&mut self, chain: ChainId, n: u64, blocked: bool) {
        if n == 0 {
            return;
        }
        let victim = if blocked { self.in_flight_on(chain).first().copied() } else { None };
        match victim {
            Some(t) => {
                self.heartbeat_attributed += n;
                self.count(t, Phase::Two, n);
            }
            None => self.heartbeat_idle += n,
        }
    }

    fn on_heartbeat(&mut self, chain: ChainId) {
        let now = self.now;
        let node = &mut self.chains[chain.slot()];
        let blocked = !node.endpoint_available();
        let out = node.heartbeat_tick(now);
        let sigma = node.params.sigma;
        self.queue.push(now + sigma, Payload::TimerFire(TimerKind::Heartbeat(chain)));
        self.attribute_heartbeat(chain, (out.probes + out.acks) as u64, blocked);
        match out.election {
            None => {}
            Some(Ok(new_proxy)) => {
                let announce = self.chains[chain.slot()].live_count().saturating_sub(1) as u64;
                self.attribute_heartbeat(chain, announce, true);
                if let Some(c) = self
                    .crashes
                    .iter_mut()
                    .rev()
                    .find(|c| c.node.chain == chain && c.was_proxy && c.replaced_at.is_none())
                {
                    c.replaced_at = Some(now);
                }
                let _ = new_proxy;
                self.flush_backlog(chain);
            }
            Some(Err(_)) => {
                // No node left: undecided transactions touching the chain abort.
                for t in self.in_flight_on(chain) {
                    let host = self.rec(t).host;
                    if self.rec(t).coord.is_some() {
                        self.at_chain(host, Action::Coord(t, CoordInput::ChainUnavailable));
                    }
                }
            }
        }
    }

    fn on_crash_arrival(&mut self) {
        let now = self.now;
        let next = self.next_crash_arrival(now);
        self.queue.push(next, Payload::TimerFire(TimerKind::CrashArrival));
        let n = self.chains.len();
        let slot = self.failure_rng.gen_range(0..n);
        let chain = ChainId::from_slot(slot);
        let node = &self.chains[slot];
        let victim = if self.cfg.crash_non_proxy {
            let live: Vec<NodeId> = node.live_nodes().collect();
            if live.is_empty() {
                return;
            }
            live[self.failure_rng.gen_range(0..live.len())]
        } else {
            if !node.endpoint_available() {
                return;
            }
            node.proxy.current_proxy
        };
        if self.in_flight_on(chain).is_empty() {
            return;
        }
        self.crash_node(victim, false);
    }

    /// Crashes `node` for the recovery time if the budget allows it.
    fn crash_node(&mut self, node: NodeId, allow_idle: bool) -> bool {
        let chain = node.chain;
        if !self.chains[chain.slot()].is_live(node) {
            return false;
        }
        let affected = self.in_flight_on(chain);
        if affected.is_empty() && !allow_idle {
            return false;
        }
        let used: Vec<u32> = affected.iter().map(|t| self.rec(*t).metrics.failures()).collect();
        if self.budget.admit(used).is_err() {
            self.crashes_refused += 1;
            return false;
        }
        let until = self.now + self.cfg.recovery;
        let was_proxy = self.chains[chain.slot()].proxy.current_proxy == node;
        self.chains[chain.slot()].crash(node, until);
        self.queue.push(until, Payload::NodeRecover(node));
        for &t in &affected {
            let rec = self.rec_mut(t);
            let in_phase_one = rec.coord.as_ref().is_none_or(|c| matches!(c.phase, CoordPhase::Init | CoordPhase::PrecommitSent));
            if let Some(c) = rec.coord.as_mut() {
                c.note_failure();
            }
            if in_phase_one {
                rec.metrics.lambda1 += 1;
            } else {
                rec.metrics.lambda2 += 1;
            }
        }
        self.crashes.push(CrashRecord { node, at: self.now, recover_at: until, was_proxy, replaced_at: None, affected });
        true
    }

    fn on_recover(&mut self, node: NodeId) {
        let chain = node.chain;
        let was_available = self.chains[chain.slot()].endpoint_available();
        let took_over = self.chains[chain.slot()].recover(node);
        if !was_available && self.chains[chain.slot()].endpoint_available() {
            if let Some(c) = self
                .crashes
                .iter_mut()
                .rev()
                .find(|c| c.node.chain == chain && c.was_proxy && c.replaced_at.is_none())
            {
                c.replaced_at = Some(self.now);
            }
        }
        let _ = took_over;
        self.flush_backlog(chain);
        self.ensure_production(chain);
    }

    fn into_trace(self) -> RunTrace {
        let quiescent = self.quiescent();
        let protocol = self.protocol;
        let chains = self
            .chains
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ledger = &self.ledgers[i];
                ChainSummary {
                    params: c.params,
                    initial_balances: self.initial_balances[i].clone(),
                    final_balances: ledger.balances().to_vec(),
                    main_txns: c.tree.main_txns().iter().map(|(t, h)| (*t, *h)).collect(),
                    height: c.tree.height(),
                    finalized_height: c.finalized_height(),
                    blocks: c.tree.len() as u64,
                    forks: c.forks,
                    proxy_epoch: c.proxy.epoch,
                    locks_held: ledger.locked_count() as u32,
                }
            })
            .collect();
        let mut txns: Vec<TxnTrace> = self
            .txns
            .iter()
            .filter(|r| r.arrived)
            .map(|r| TxnTrace {
                request: r.request.clone(),
                outcome: r.outcome(protocol),
                coordinator_phase: r.coord.as_ref().map(|c| c.phase),
                metrics: r.metrics.clone(),
                recycled_after_commit: r.recycled_after_commit,
                legs: r
                    .parts
                    .iter()
                    .map(|(c, p)| LegTrace { chain: *c, phase: p.phase, applied_at: r.applied_at.get(c).copied() })
                    .collect(),
            })
            .collect();
        txns.sort_by_key(|t| t.request.uuid);
        RunTrace {
            protocol,
            seed: self.cfg.seed,
            end_time: self.now,
            events_processed: self.events,
            event_digest: self.digest.finish(),
            quiescent,
            tau_max: self.net.max_sampled(),
            recovery: self.cfg.recovery,
            chains,
            txns,
            lock_violations: self.lock_violations,
            anomalies: self.anomalies,
            heartbeat_idle: self.heartbeat_idle,
            heartbeat_attributed: self.heartbeat_attributed,
            crashes: self.crashes,
            crashes_refused: self.crashes_refused,
            window_samples: self.window_samples,
            deliveries: self.deliveries.unwrap_or_default(),
        }
    }
}

/// Convenience: build and run to quiescence.
pub fn run_config(cfg: &RunConfig) -> Result<RunTrace, SimError> {
    Simulation::new(cfg)?.run(RunUntil::Quiescence)
}

//! Discrete-event plumbing: event queue, network latency model and the
//! crash-failure budget.

use alloc::collections::BinaryHeap;
use core::cmp::Ordering;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{BlockId, ChainId, NodeId, TxnId};
use crate::protocol::Message;
use crate::time::{Dur, Time};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Nominal one-way network latency.
    pub tau: Dur,
    /// Time until a crashed node is back.
    pub recovery: Dur,
    /// Crash failures allowed per transaction.
    pub failure_budget: u32,
    pub seed: u64,
    pub latency_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("network latency must be positive")]
    ZeroLatency,
    #[error("latency jitter {0} outside [0, 1)")]
    Jitter(f64),
}

impl SimParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.tau == Dur::ZERO {
            return Err(ParamError::ZeroLatency);
        }
        if !(0.0..1.0).contains(&self.latency_jitter) {
            return Err(ParamError::Jitter(self.latency_jitter));
        }
        Ok(())
    }

    pub fn min_latency(&self) -> Dur {
        self.tau.mul_f64(1.0 - self.latency_jitter)
    }

    pub fn max_latency(&self) -> Dur {
        self.tau.mul_f64(1.0 + self.latency_jitter)
    }
}

/// Point-to-point message between chain endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_id: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub msg: Message,
}

impl Envelope {
    /// Coordinator and participant on the same chain: no network hop.
    pub fn is_local(&self) -> bool {
        self.from.chain == self.to.chain
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimerKind {
    /// Phase-one deadline of the coordinator of `txn`.
    Deadline { txn: TxnId, incarnation: u32, attempt: u32 },
    /// `block` may have entered the finalized prefix.
    Finality { chain: ChainId, block: BlockId },
    /// Fixed post-apply wait of a participant.
    DoneWait { txn: TxnId, chain: ChainId },
    Heartbeat(ChainId),
    /// Next arrival of the random crash process.
    CrashArrival,
    WindowSample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Payload {
    MessageDelivery(Envelope),
    TimerFire(TimerKind),
    NodeCrash(NodeId),
    NodeRecover(NodeId),
    BlockProduce(ChainId),
    /// Index into the workload.
    WorkloadArrival(u32),
}

impl Payload {
    pub fn tag(&self) -> u8 {
        match self {
            Payload::MessageDelivery(_) => 1,
            Payload::TimerFire(_) => 2,
            Payload::NodeCrash(_) => 3,
            Payload::NodeRecover(_) => 4,
            Payload::BlockProduce(_) => 5,
            Payload::WorkloadArrival(_) => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub fire_at: Time,
    pub sequence: u64,
    pub payload: Payload,
}

impl Ord for SimEvent {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.sequence).cmp(&(self.fire_at, self.sequence))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Events ordered by `(fire_at, sequence)`; sequence numbers are handed out
/// at insertion so equal timestamps pop in insertion order.
#[derive(Clone, Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn new() -> EventQueue {
        EventQueue::default()
    }

    pub fn push(&mut self, fire_at: Time, payload: Payload) -> u64 {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(SimEvent { fire_at, sequence, payload });
        sequence
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|e| e.fire_at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Latency sampling and message ids. Delivery to a crashed endpoint is the
/// caller's concern: it holds the envelope until the chain can take it.
#[derive(Clone, Debug)]
pub struct Network {
    params: SimParams,
    rng: ChaCha8Rng,
    next_msg_id: u64,
    max_sampled: Dur,
    in_flight: u64,
}

impl Network {
    pub fn new(params: SimParams, rng: ChaCha8Rng) -> Network {
        Network { params, rng, next_msg_id: 1, max_sampled: Dur::ZERO, in_flight: 0 }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn sample_latency(&mut self) -> Dur {
        let lo = self.params.min_latency().as_micros();
        let hi = self.params.max_latency().as_micros();
        let d = if hi > lo { Dur(self.rng.gen_range(lo..=hi)) } else { Dur(lo) };
        if d > self.max_sampled {
            self.max_sampled = d;
        }
        d
    }

    /// Schedules delivery and returns the envelope. Local envelopes are
    /// delivered at `now` without sampling a latency.
    pub fn send(&mut self, queue: &mut EventQueue, now: Time, from: NodeId, to: NodeId, msg: Message) -> Envelope {
        let env = Envelope { msg_id: self.next_msg_id, from, to, msg };
        self.next_msg_id += 1;
        let latency = if env.is_local() { Dur::ZERO } else { self.sample_latency() };
        self.in_flight += 1;
        queue.push(now + latency, Payload::MessageDelivery(env));
        env
    }

    /// Re-schedules an envelope already counted as in flight, e.g. a hop
    /// forwarded inside a chain to its current proxy.
    pub fn redeliver(&mut self, queue: &mut EventQueue, at: Time, env: Envelope) {
        queue.push(at, Payload::MessageDelivery(env));
    }

    /// Marks an envelope as handed to a live endpoint.
    pub fn delivered(&mut self) {
        self.in_flight -= 1;
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    /// Largest latency sampled so far, used by the bound checks.
    pub fn max_sampled(&self) -> Dur {
        self.max_sampled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("failure budget of {budget} crashes per transaction exhausted")]
pub struct BudgetExhausted {
    pub budget: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureBudget {
    pub per_txn: u32,
}

impl FailureBudget {
    /// A crash may be injected only if every transaction it would hit still
    /// has budget left.
    pub fn admit(&self, used: impl IntoIterator<Item = u32>) -> Result<(), BudgetExhausted> {
        let refuse = BudgetExhausted { budget: self.per_txn };
        if self.per_txn == 0 {
            return Err(refuse);
        }
        for u in used {
            if u >= self.per_txn {
                return Err(refuse);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::MsgKind;
    use rand::SeedableRng;

    fn params(jitter: f64) -> SimParams {
        SimParams { tau: Dur::from_millis(50), recovery: Dur::from_secs(2), failure_budget: 1, seed: 1, latency_jitter: jitter }
    }

    fn node(c: u32) -> NodeId {
        NodeId { chain: ChainId(c), ordinal: 0 }
    }

    #[test]
    fn zero_jitter_delivers_after_tau() {
        let mut q = EventQueue::new();
        let mut net = Network::new(params(0.0), ChaCha8Rng::seed_from_u64(1));
        let msg = Message::new(MsgKind::Precommit, TxnId(1), 0, 0);
        let a = net.send(&mut q, Time::ZERO, node(1), node(2), msg);
        let b = net.send(&mut q, Time::ZERO, node(1), node(2), msg);
        assert_ne!(a.msg_id, b.msg_id);
        let first = q.pop().unwrap();
        let second = q.pop().unwrap();
        assert_eq!(first.fire_at, Time::from_millis(50));
        assert_eq!(second.fire_at, Time::from_millis(50));
        assert_eq!(first.payload, Payload::MessageDelivery(a));
        assert_eq!(second.payload, Payload::MessageDelivery(b));
    }

    #[test]
    fn jitter_stays_in_range() {
        let mut net = Network::new(params(0.2), ChaCha8Rng::seed_from_u64(9));
        for _ in 0..1000 {
            let d = net.sample_latency();
            assert!(d >= Dur::from_millis(40) && d <= Dur::from_millis(60));
        }
        assert!(net.max_sampled() <= Dur::from_millis(60));
    }

    #[test]
    fn local_messages_skip_the_network() {
        let mut q = EventQueue::new();
        let mut net = Network::new(params(0.0), ChaCha8Rng::seed_from_u64(1));
        let msg = Message::new(MsgKind::Precommit, TxnId(1), 0, 0);
        net.send(&mut q, Time::from_millis(7), node(1), node(1), msg);
        assert_eq!(q.pop().unwrap().fire_at, Time::from_millis(7));
    }

    #[test]
    fn budget_rules() {
        assert!(FailureBudget { per_txn: 0 }.admit([]).is_err());
        let b = FailureBudget { per_txn: 2 };
        assert!(b.admit([0, 1]).is_ok());
        assert!(b.admit([2]).is_err());
    }

    #[test]
    fn validation() {
        assert!(params(0.0).validate().is_ok());
        assert!(params(1.0).validate().is_err());
        assert!(SimParams { tau: Dur::ZERO, ..params(0.0) }.validate().is_err());
    }
}

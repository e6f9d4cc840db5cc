//! One blockchain: block production with forks, finality, and the proxy
//! (endpoint) role with heartbeat-driven failover.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{finalized_prefix, Block, BlockId, ChainId, ForkTree, NodeId, TxnId};
use crate::time::{Dur, Time};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub chain: ChainId,
    pub n_nodes: u32,
    /// Age after which a main-branch block is final.
    pub delta: Dur,
    /// Heartbeat interval.
    pub sigma: Dur,
    pub block_interval: Dur,
    pub fork_prob: f64,
    pub max_fork_depth: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainParamError {
    #[error("chain {0} needs at least one node")]
    NoNodes(ChainId),
    #[error("chain {chain}: heartbeat interval {sigma} exceeds a tenth of the pending time {delta}")]
    HeartbeatTooSlow { chain: ChainId, sigma: Dur, delta: Dur },
    #[error("chain {chain}: heartbeat interval must be positive")]
    ZeroHeartbeat { chain: ChainId },
    #[error("chain {chain}: block interval must be positive")]
    ZeroBlockInterval { chain: ChainId },
    #[error("chain {chain}: fork probability {p} outside [0, 1)")]
    ForkProb { chain: ChainId, p: f64 },
    #[error("chain {chain}: max fork depth must be at least 1")]
    ForkDepth { chain: ChainId },
}

impl ChainParams {
    pub fn validate(&self) -> Result<(), ChainParamError> {
        let chain = self.chain;
        if self.n_nodes == 0 {
            return Err(ChainParamError::NoNodes(chain));
        }
        if self.sigma == Dur::ZERO {
            return Err(ChainParamError::ZeroHeartbeat { chain });
        }
        if self.sigma.as_micros() * 10 > self.delta.as_micros() {
            return Err(ChainParamError::HeartbeatTooSlow { chain, sigma: self.sigma, delta: self.delta });
        }
        if self.block_interval == Dur::ZERO {
            return Err(ChainParamError::ZeroBlockInterval { chain });
        }
        if !(0.0..1.0).contains(&self.fork_prob) {
            return Err(ChainParamError::ForkProb { chain, p: self.fork_prob });
        }
        if self.max_fork_depth == 0 {
            return Err(ChainParamError::ForkDepth { chain });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyState {
    pub current_proxy: NodeId,
    pub epoch: u64,
    pub last_heartbeat_ack: BTreeMap<NodeId, Time>,
    /// No live node could take the role; the first node to recover does.
    pub vacant: bool,
    /// The last round of probes went unanswered.
    pub missed_probe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no live node left on chain {0}")]
pub struct NoQualifiedNode(pub ChainId);

/// What a produced block did to the chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProduceOutcome {
    /// Blocks created, root-most first.
    pub created: Vec<BlockId>,
    /// Transactions placed into the new blocks.
    pub included: Vec<TxnId>,
    /// Transactions that left the main branch, returned to the mempool.
    pub cut: Vec<TxnId>,
    /// Depth of the reorganisation, zero when the tip was simply extended.
    pub reorg_depth: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HeartbeatOutcome {
    pub probes: u32,
    pub acks: u32,
    /// Set when the missed probe triggered an election.
    pub election: Option<Result<NodeId, NoQualifiedNode>>,
}

#[derive(Clone, Debug)]
pub struct ChainNode {
    pub params: ChainParams,
    pub tree: ForkTree,
    mempool: VecDeque<TxnId>,
    in_mempool: BTreeSet<TxnId>,
    live: Vec<bool>,
    recover_at: Vec<Option<Time>>,
    pub proxy: ProxyState,
    finalized: Option<u64>,
    /// Blocks whose finality timer has not fired yet.
    pending_finality: BTreeSet<BlockId>,
    /// Scheduled production slot, if any.
    pub production_at: Option<Time>,
    pub forks: u32,
    rng: ChaCha8Rng,
}

impl ChainNode {
    pub fn new(params: ChainParams, rng: ChaCha8Rng) -> ChainNode {
        let chain = params.chain;
        let n = params.n_nodes as usize;
        let proxy = NodeId { chain, ordinal: 0 };
        ChainNode {
            params,
            tree: ForkTree::new(chain),
            mempool: VecDeque::new(),
            in_mempool: BTreeSet::new(),
            live: alloc::vec![true; n],
            recover_at: alloc::vec![None; n],
            proxy: ProxyState {
                current_proxy: proxy,
                epoch: 0,
                last_heartbeat_ack: BTreeMap::new(),
                vacant: false,
                missed_probe: false,
            },
            finalized: (params.delta == Dur::ZERO).then_some(0),
            pending_finality: BTreeSet::new(),
            production_at: None,
            forks: 0,
            rng,
        }
    }

    pub fn chain(&self) -> ChainId {
        self.params.chain
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        node.chain == self.chain() && self.live.get(node.ordinal as usize).copied().unwrap_or(false)
    }

    pub fn live_count(&self) -> u32 {
        self.live.iter().filter(|l| **l).count() as u32
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        let chain = self.chain();
        self.live
            .iter()
            .enumerate()
            .filter(|(_, l)| **l)
            .map(move |(i, _)| NodeId { chain, ordinal: i as u32 })
    }

    pub fn recover_at(&self, node: NodeId) -> Option<Time> {
        self.recover_at.get(node.ordinal as usize).copied().flatten()
    }

    /// The proxy is up and can act for the chain.
    pub fn endpoint_available(&self) -> bool {
        !self.proxy.vacant && self.is_live(self.proxy.current_proxy)
    }

    pub fn crash(&mut self, node: NodeId, until: Time) {
        let i = node.ordinal as usize;
        self.live[i] = false;
        self.recover_at[i] = Some(until);
    }

    /// Brings a node back. Returns true if it took over a vacant proxy role.
    pub fn recover(&mut self, node: NodeId) -> bool {
        let i = node.ordinal as usize;
        self.live[i] = true;
        self.recover_at[i] = None;
        if node == self.proxy.current_proxy {
            self.proxy.missed_probe = false;
        }
        if self.proxy.vacant {
            self.proxy.vacant = false;
            self.proxy.current_proxy = node;
            self.proxy.epoch += 1;
            self.proxy.missed_probe = false;
            return true;
        }
        false
    }

    /// New proxy: the live node with the smallest ordinal.
    pub fn elect_proxy(&mut self) -> Result<NodeId, NoQualifiedNode> {
        self.proxy.missed_probe = false;
        let first = self.live_nodes().next();
        match first {
            Some(n) => {
                self.proxy.current_proxy = n;
                self.proxy.epoch += 1;
                self.proxy.vacant = false;
                Ok(n)
            }
            None => {
                self.proxy.vacant = true;
                Err(NoQualifiedNode(self.chain()))
            }
        }
    }

    /// One heartbeat round: every live non-proxy node probes the proxy. A
    /// round that follows an unanswered one elects a new proxy.
    pub fn heartbeat_tick(&mut self, now: Time) -> HeartbeatOutcome {
        let mut out = HeartbeatOutcome::default();
        if self.proxy.vacant {
            return out;
        }
        let proxy = self.proxy.current_proxy;
        let probers: Vec<NodeId> = self.live_nodes().filter(|n| *n != proxy).collect();
        if self.is_live(proxy) {
            out.probes = probers.len() as u32;
            out.acks = out.probes;
            for n in probers {
                self.proxy.last_heartbeat_ack.insert(n, now);
            }
            self.proxy.missed_probe = false;
        } else if self.proxy.missed_probe {
            out.election = Some(self.elect_proxy());
        } else {
            out.probes = probers.len() as u32;
            self.proxy.missed_probe = true;
        }
        out
    }

    pub fn submit(&mut self, txn: TxnId) -> bool {
        if self.tree.main_index_of(txn).is_some() || !self.in_mempool.insert(txn) {
            return false;
        }
        self.mempool.push_back(txn);
        true
    }

    pub fn in_mempool(&self, txn: TxnId) -> bool {
        self.in_mempool.contains(&txn)
    }

    /// The leg is waiting in the mempool or sits on the main branch.
    pub fn leg_pending(&self, txn: TxnId) -> bool {
        self.in_mempool(txn) || self.tree.main_index_of(txn).is_some()
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// Production slot for a mempool that just became non-empty: the next
    /// multiple of the block interval strictly after `now`.
    pub fn next_slot(&self, now: Time) -> Time {
        let bi = self.params.block_interval.as_micros();
        Time((now.as_micros() / bi + 1) * bi)
    }

    pub fn finalized_height(&self) -> Option<u64> {
        self.finalized
    }

    pub fn pending_finality(&self) -> usize {
        self.pending_finality.len()
    }

    /// Nothing left for this chain to do.
    pub fn is_idle(&self) -> bool {
        self.mempool.is_empty() && self.pending_finality.is_empty()
    }

    fn draw_fork_depth(&mut self, now: Time) -> u32 {
        let p = self.params.fork_prob;
        if p <= 0.0 || !self.rng.gen_bool(p) {
            return 0;
        }
        let mut depth = 1;
        while depth < self.params.max_fork_depth && self.rng.gen_bool(p) {
            depth += 1;
        }
        // Blocks old enough to be final are off limits even if their
        // finality timer has not fired yet.
        let floor = finalized_prefix(&self.tree, now, self.params.delta).unwrap_or(0);
        let room = self.tree.height().saturating_sub(floor);
        depth.min(room as u32)
    }

    /// Produces the next block from the whole mempool. With probability
    /// `fork_prob` a competing branch of `depth + 1` blocks is grown from the
    /// main block `depth` below the tip, replacing the last `depth` blocks;
    /// the depth is geometric, capped by `max_fork_depth` and by finality.
    /// Returns `None` when every node of the chain is down.
    pub fn produce_block(&mut self, now: Time) -> Option<ProduceOutcome> {
        let producer = self.live_nodes().next()?;
        let txns: Vec<TxnId> = self.mempool.drain(..).collect();
        self.in_mempool.clear();
        let mut depth = self.draw_fork_depth(now);
        let fork_point = |tree: &ForkTree, d: u32| {
            tree.main_block_at(tree.height() - d as u64).expect("fork point on main").clone()
        };
        // The first new block carries the transactions; should an identical
        // block already exist from an earlier fork, extend the tip instead.
        if depth > 0 {
            let probe = Block::child_of(&fork_point(&self.tree, depth), txns.clone(), producer, now);
            if self.tree.get(probe.block_id).is_some() {
                depth = 0;
            }
        }
        let mut out = ProduceOutcome { included: txns.clone(), reorg_depth: depth, ..Default::default() };

        let mut parent = fork_point(&self.tree, depth);
        let mut cut_blocks = Vec::new();
        for step in 0..=depth {
            let body = if step == 0 { txns.clone() } else { Vec::new() };
            let block = Block::child_of(&parent, body, producer, now);
            let ins = self.tree.insert(block.clone()).expect("produced block fits the tree");
            cut_blocks.extend(ins.cut);
            out.created.push(block.block_id);
            self.pending_finality.insert(block.block_id);
            parent = block;
        }
        if depth > 0 {
            self.forks += 1;
        }

        let mut seen = BTreeSet::new();
        for id in cut_blocks {
            if self.tree.is_on_main(id) {
                continue;
            }
            let block = self.tree.get(id).expect("cut block stays in the tree");
            for &t in &block.txns {
                if self.tree.main_index_of(t).is_none() && seen.insert(t) {
                    out.cut.push(t);
                }
            }
            self.pending_finality.remove(&id);
        }
        for &t in &out.cut {
            self.submit(t);
        }
        Some(out)
    }

    /// Transactions on main blocks that became final since the last call.
    pub fn advance_finality(&mut self, now: Time, block: BlockId) -> Vec<TxnId> {
        self.pending_finality.remove(&block);
        let new = finalized_prefix(&self.tree, now, self.params.delta);
        let mut out = Vec::new();
        if new > self.finalized {
            let start = self.finalized.map_or(0, |h| h + 1);
            let end = new.expect("greater than some");
            for i in start..=end {
                let b = self.tree.main_block_at(i).expect("finalized block on main");
                out.extend(b.txns.iter().copied());
            }
            self.finalized = new;
        }
        out
    }
}

/// Transactions on the abandoned blocks that the main branch no longer holds.
pub fn on_fork_resolved(tree: &ForkTree, cut_branch: &[BlockId]) -> Vec<TxnId> {
    let mut out = BTreeSet::new();
    for id in cut_branch {
        if let Some(b) = tree.get(*id) {
            for &t in &b.txns {
                if tree.main_index_of(t).is_none() {
                    out.insert(t);
                }
            }
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::longest_branch;
    use rand::SeedableRng;

    fn params(fork_prob: f64, n: u32) -> ChainParams {
        ChainParams {
            chain: ChainId(1),
            n_nodes: n,
            delta: Dur::from_secs(2),
            sigma: Dur::from_millis(100),
            block_interval: Dur::from_millis(100),
            fork_prob,
            max_fork_depth: 3,
        }
    }

    fn node(fork_prob: f64, n: u32, seed: u64) -> ChainNode {
        ChainNode::new(params(fork_prob, n), ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn validation() {
        assert!(params(0.0, 3).validate().is_ok());
        let slow = ChainParams { sigma: Dur::from_millis(300), ..params(0.0, 3) };
        assert!(matches!(slow.validate(), Err(ChainParamError::HeartbeatTooSlow { .. })));
        assert!(params(1.0, 3).validate().is_err());
        assert!(params(0.0, 0).validate().is_err());
    }

    #[test]
    fn no_forks_is_a_single_chain() {
        let mut c = node(0.0, 2, 1);
        for i in 0..50 {
            c.submit(TxnId(i));
            let out = c.produce_block(Time::from_millis(100 * (i + 1))).unwrap();
            assert!(out.cut.is_empty());
        }
        assert_eq!(c.tree.len(), 51);
        assert_eq!(c.tree.tips().len(), 1);
        assert_eq!(c.tree.height(), 50);
    }

    #[test]
    fn forked_tree_is_reproducible() {
        let build = |seed| {
            let mut c = node(0.5, 2, seed);
            for i in 0..100 {
                c.submit(TxnId(i));
                c.produce_block(Time::from_millis(10 * (i + 1)));
            }
            let mut ids: Vec<BlockId> = c.tree.blocks().map(|b| b.block_id).collect();
            ids.sort();
            (ids, c.tree.main_chain().to_vec())
        };
        assert_eq!(build(4), build(4));
        assert!(build(4).0.len() > 101, "forks create side blocks");
    }

    #[test]
    fn cut_transactions_return_to_mempool() {
        // Search seeds for a reorg of depth two and check the cut set by
        // enumerating the abandoned blocks.
        for seed in 0..200 {
            let mut c = node(0.3, 1, seed);
            for i in 0..40u64 {
                c.submit(TxnId(i));
                let before: Vec<BlockId> = c.tree.main_chain().to_vec();
                let out = c.produce_block(Time::from_millis(10 * (i + 1))).unwrap();
                if out.reorg_depth == 2 {
                    let abandoned: Vec<BlockId> =
                        before.iter().copied().filter(|b| !c.tree.is_on_main(*b)).collect();
                    assert_eq!(abandoned.len(), 2);
                    let mut expected: Vec<TxnId> =
                        abandoned.iter().flat_map(|b| c.tree.get(*b).unwrap().txns.clone()).collect();
                    expected.sort();
                    let mut got = out.cut.clone();
                    got.sort();
                    assert_eq!(got, expected);
                    assert_eq!(on_fork_resolved(&c.tree, &abandoned), expected);
                    for t in &expected {
                        assert!(c.in_mempool(*t));
                    }
                    return;
                }
            }
        }
        panic!("no depth-2 reorg found");
    }

    #[test]
    fn fork_resolution_set_difference() {
        let mut t = ForkTree::new(ChainId(1));
        let p = NodeId { chain: ChainId(1), ordinal: 0 };
        let g = t.genesis().clone();
        let a = Block::child_of(&g, alloc::vec![TxnId(5), TxnId(6)], p, Time::ZERO);
        let b = Block::child_of(&g, alloc::vec![TxnId(5)], NodeId { chain: ChainId(1), ordinal: 1 }, Time::ZERO);
        let b2 = Block::child_of(&b, alloc::vec![], p, Time::ZERO);
        t.insert(a.clone()).unwrap();
        t.insert(b).unwrap();
        t.insert(b2).unwrap();
        assert!(!t.is_on_main(a.block_id));
        assert_eq!(on_fork_resolved(&t, &[a.block_id]), alloc::vec![TxnId(6)]);
    }

    #[test]
    fn finality_advances_with_time() {
        let mut c = node(0.0, 1, 1);
        c.submit(TxnId(1));
        let out = c.produce_block(Time::from_millis(100)).unwrap();
        let b = out.created[0];
        assert!(c.advance_finality(Time::from_millis(2000), b).is_empty());
        assert_eq!(c.advance_finality(Time::from_millis(2100), b), alloc::vec![TxnId(1)]);
        assert_eq!(c.finalized_height(), Some(1));
        assert!(c.is_idle());
    }

    #[test]
    fn never_forks_below_finality() {
        let mut c = node(0.9, 1, 3);
        for i in 0..300u64 {
            c.submit(TxnId(i));
            let now = Time::from_millis(100 * (i + 1));
            let fin_before = c.finalized_height();
            let fin_block = fin_before.map(|h| c.tree.main_block_at(h).unwrap().block_id);
            c.produce_block(now);
            if let Some(fb) = fin_block {
                assert!(c.tree.is_on_main(fb));
            }
            let tip = c.tree.tip().block_id;
            c.advance_finality(now, tip);
        }
        let main: Vec<BlockId> = longest_branch(&c.tree).iter().map(|b| b.block_id).collect();
        assert_eq!(main, c.tree.main_chain());
    }

    #[test]
    fn election_picks_smallest_live() {
        let mut c = node(0.0, 3, 1);
        c.crash(NodeId { chain: ChainId(1), ordinal: 0 }, Time::from_secs(5));
        assert_eq!(c.elect_proxy().unwrap().ordinal, 1);
        c.crash(NodeId { chain: ChainId(1), ordinal: 1 }, Time::from_secs(5));
        assert_eq!(c.elect_proxy().unwrap().ordinal, 2);
        assert_eq!(c.proxy.epoch, 2);

        let mut single = node(0.0, 1, 1);
        single.crash(NodeId { chain: ChainId(1), ordinal: 0 }, Time::from_secs(1));
        assert_eq!(single.elect_proxy(), Err(NoQualifiedNode(ChainId(1))));
        assert!(single.recover(NodeId { chain: ChainId(1), ordinal: 0 }));
        assert!(single.endpoint_available());
    }

    #[test]
    fn heartbeat_detects_within_two_ticks() {
        let mut c = node(0.0, 3, 1);
        let t0 = Time::from_millis(100);
        let ok = c.heartbeat_tick(t0);
        assert_eq!((ok.probes, ok.acks, ok.election), (2, 2, None));
        c.crash(NodeId { chain: ChainId(1), ordinal: 0 }, Time::from_secs(3));
        let miss = c.heartbeat_tick(Time::from_millis(200));
        assert_eq!((miss.probes, miss.acks, miss.election), (2, 0, None));
        let elect = c.heartbeat_tick(Time::from_millis(300));
        assert_eq!(elect.election, Some(Ok(NodeId { chain: ChainId(1), ordinal: 1 })));
        assert!(c.endpoint_available());
    }
}

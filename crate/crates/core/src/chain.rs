//! Ledger-level domain types: chain, node and entity identifiers, multi-chain
//! transfer requests, blocks, per-chain fork trees and account ledgers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{Dur, Time};

/// One blockchain in the consortium. Indices start at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub u32);

impl ChainId {
    /// Zero-based position, for indexing per-chain vectors.
    pub fn slot(self) -> usize {
        debug_assert!(self.0 >= 1);
        (self.0 - 1) as usize
    }

    pub fn from_slot(slot: usize) -> ChainId {
        ChainId(slot as u32 + 1)
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// A node of one chain's network. Node sets of different chains are disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub chain: ChainId,
    pub ordinal: u32,
}

impl NodeId {
    pub const fn new(chain: ChainId, ordinal: u32) -> NodeId {
        NodeId { chain, ordinal }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/n{}", self.chain, self.ordinal)
    }
}

/// An account on one chain; the unit of locking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub chain: ChainId,
    pub account: u32,
}

/// Globally unique transaction identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

/// One chain's share of a transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Leg {
    pub chain: ChainId,
    pub entity: EntityId,
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRequest {
    pub uuid: TxnId,
    pub coordinator: ChainId,
    pub legs: Vec<Leg>,
    pub submit_time: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("transaction {0} touches fewer than two chains")]
    TooFewChains(TxnId),
    #[error("transaction {0} has two legs on {1}")]
    DuplicateChain(TxnId, ChainId),
    #[error("transaction {0} leg entity belongs to {1}, not the leg's chain")]
    EntityChainMismatch(TxnId, ChainId),
    #[error("transaction {txn} legs sum to {sum}, not zero")]
    NotConserving { txn: TxnId, sum: i64 },
}

impl TransactionRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        let mut seen = BTreeSet::new();
        let mut sum: i64 = 0;
        for leg in &self.legs {
            if !seen.insert(leg.chain) {
                return Err(RequestError::DuplicateChain(self.uuid, leg.chain));
            }
            if leg.entity.chain != leg.chain {
                return Err(RequestError::EntityChainMismatch(self.uuid, leg.chain));
            }
            sum += leg.delta;
        }
        if seen.len() < 2 {
            return Err(RequestError::TooFewChains(self.uuid));
        }
        if sum != 0 {
            return Err(RequestError::NotConserving { txn: self.uuid, sum });
        }
        Ok(())
    }

    pub fn leg_on(&self, chain: ChainId) -> Option<&Leg> {
        self.legs.iter().find(|l| l.chain == chain)
    }

    /// Chains holding a leg, in ascending order.
    pub fn chains(&self) -> Vec<ChainId> {
        let mut v: Vec<ChainId> = self.legs.iter().map(|l| l.chain).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub chain: ChainId,
    pub index: u64,
    pub parent: Option<BlockId>,
    pub txns: Vec<TxnId>,
    pub producer: NodeId,
    pub created_at: Time,
    pub block_id: BlockId,
}

/// Deterministic, non-cryptographic 64-bit digest of a block's identity fields.
pub fn block_hash(
    chain: ChainId,
    index: u64,
    parent: Option<BlockId>,
    txns: &[TxnId],
    producer: NodeId,
) -> BlockId {
    let mut h = FnvHasher::default();
    h.write_u32(chain.0);
    h.write_u64(index);
    match parent {
        Some(p) => {
            h.write_u8(1);
            h.write_u64(p.0);
        }
        None => h.write_u8(0),
    }
    h.write_u64(txns.len() as u64);
    for t in txns {
        h.write_u64(t.0);
    }
    h.write_u32(producer.chain.0);
    h.write_u32(producer.ordinal);
    BlockId(h.finish())
}

impl Block {
    pub fn genesis(chain: ChainId) -> Block {
        let producer = NodeId::new(chain, 0);
        Block {
            chain,
            index: 0,
            parent: None,
            txns: Vec::new(),
            producer,
            created_at: Time::ZERO,
            block_id: block_hash(chain, 0, None, &[], producer),
        }
    }

    pub fn child_of(parent: &Block, txns: Vec<TxnId>, producer: NodeId, created_at: Time) -> Block {
        let index = parent.index + 1;
        let block_id = block_hash(parent.chain, index, Some(parent.block_id), &txns, producer);
        Block {
            chain: parent.chain,
            index,
            parent: Some(parent.block_id),
            txns,
            producer,
            created_at,
            block_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("block {0} is already in the tree")]
    Duplicate(BlockId),
    #[error("parent of block {0} is unknown")]
    UnknownParent(BlockId),
    #[error("block {0} has an index inconsistent with its parent")]
    BadIndex(BlockId),
    #[error("block {0} belongs to another chain")]
    WrongChain(BlockId),
    #[error("transaction {txn} already appears on the branch of block {block}")]
    DuplicateTxnOnBranch { block: BlockId, txn: TxnId },
}

/// Result of adding a block to a [`ForkTree`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InsertOutcome {
    /// The new block ended up on the main (longest) branch.
    pub on_main: bool,
    /// Blocks that were on the main branch before the insert and no longer are.
    pub cut: Vec<BlockId>,
    /// Blocks newly on the main branch, root-most first.
    pub adopted: Vec<BlockId>,
}

/// Per-chain block tree. The main branch is maintained incrementally and always
/// equals [`longest_branch`] of the tree.
#[derive(Clone, Debug)]
pub struct ForkTree {
    chain: ChainId,
    blocks: BTreeMap<BlockId, Block>,
    tips: BTreeSet<BlockId>,
    /// `main[i]` is the main-branch block at index `i`.
    main: Vec<BlockId>,
    /// Transaction -> index of the main-branch block carrying it.
    main_txns: BTreeMap<TxnId, u64>,
}

impl ForkTree {
    pub fn new(chain: ChainId) -> ForkTree {
        let genesis = Block::genesis(chain);
        let id = genesis.block_id;
        let mut blocks = BTreeMap::new();
        blocks.insert(id, genesis);
        let mut tips = BTreeSet::new();
        tips.insert(id);
        ForkTree { chain, blocks, tips, main: alloc::vec![id], main_txns: BTreeMap::new() }
    }

    pub fn chain(&self) -> ChainId {
        self.chain
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[&self.main[0]]
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn tips(&self) -> &BTreeSet<BlockId> {
        &self.tips
    }

    /// Main-branch block ids, genesis first.
    pub fn main_chain(&self) -> &[BlockId] {
        &self.main
    }

    pub fn tip(&self) -> &Block {
        &self.blocks[self.main.last().expect("main branch holds genesis")]
    }

    pub fn height(&self) -> u64 {
        (self.main.len() - 1) as u64
    }

    pub fn main_block_at(&self, index: u64) -> Option<&Block> {
        self.main.get(index as usize).map(|id| &self.blocks[id])
    }

    pub fn is_on_main(&self, id: BlockId) -> bool {
        match self.blocks.get(&id) {
            Some(b) => self.main.get(b.index as usize) == Some(&id),
            None => false,
        }
    }

    /// Index of the main-branch block carrying `txn`, if any.
    pub fn main_index_of(&self, txn: TxnId) -> Option<u64> {
        self.main_txns.get(&txn).copied()
    }

    pub fn main_txns(&self) -> &BTreeMap<TxnId, u64> {
        &self.main_txns
    }

    /// Root-to-`id` path.
    pub fn path_to(&self, id: BlockId) -> Vec<BlockId> {
        let mut path = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            path.push(c);
            cur = self.blocks.get(&c).and_then(|b| b.parent);
        }
        path.reverse();
        path
    }

    pub fn insert(&mut self, block: Block) -> Result<InsertOutcome, TreeError> {
        let id = block.block_id;
        if block.chain != self.chain {
            return Err(TreeError::WrongChain(id));
        }
        if self.blocks.contains_key(&id) {
            return Err(TreeError::Duplicate(id));
        }
        let parent_id = block.parent.ok_or(TreeError::BadIndex(id))?;
        let parent = self.blocks.get(&parent_id).ok_or(TreeError::UnknownParent(id))?;
        if block.index != parent.index + 1 {
            return Err(TreeError::BadIndex(id));
        }
        self.check_branch_unique(&block)?;

        let tip = self.tip();
        let becomes_main =
            block.index > tip.index || (block.index == tip.index && id < tip.block_id);

        self.tips.remove(&parent_id);
        self.tips.insert(id);
        let index = block.index;
        self.blocks.insert(id, block);

        let mut outcome = InsertOutcome { on_main: becomes_main, ..InsertOutcome::default() };
        if !becomes_main {
            return Ok(outcome);
        }

        // New main branch = path to the new block. Find the fork point.
        let mut new_suffix = Vec::new();
        let mut cur = id;
        loop {
            let b = &self.blocks[&cur];
            if self.main.get(b.index as usize) == Some(&cur) {
                break;
            }
            new_suffix.push(cur);
            cur = b.parent.expect("non-genesis block has a parent");
        }
        let fork_index = self.blocks[&cur].index;
        new_suffix.reverse();

        for old in self.main.drain(fork_index as usize + 1..) {
            for t in &self.blocks[&old].txns {
                self.main_txns.remove(t);
            }
            outcome.cut.push(old);
        }
        for &nb in &new_suffix {
            let b = &self.blocks[&nb];
            for t in &b.txns {
                self.main_txns.insert(*t, b.index);
            }
            self.main.push(nb);
        }
        debug_assert_eq!(self.main.len() as u64, index + 1);
        outcome.adopted = new_suffix;
        Ok(outcome)
    }

    fn check_branch_unique(&self, block: &Block) -> Result<(), TreeError> {
        if block.txns.is_empty() {
            return Ok(());
        }
        let mut own = BTreeSet::new();
        for t in &block.txns {
            if !own.insert(*t) {
                return Err(TreeError::DuplicateTxnOnBranch { block: block.block_id, txn: *t });
            }
        }
        // Walk the side segment down to the main branch, then consult the main index.
        let mut cur = block.parent;
        while let Some(c) = cur {
            let b = &self.blocks[&c];
            if self.main.get(b.index as usize) == Some(&c) {
                for t in &block.txns {
                    if let Some(&i) = self.main_txns.get(t) {
                        if i <= b.index {
                            return Err(TreeError::DuplicateTxnOnBranch {
                                block: block.block_id,
                                txn: *t,
                            });
                        }
                    }
                }
                return Ok(());
            }
            if let Some(t) = b.txns.iter().find(|t| own.contains(t)) {
                return Err(TreeError::DuplicateTxnOnBranch { block: block.block_id, txn: *t });
            }
            cur = b.parent;
        }
        Ok(())
    }
}

/// Root-to-tip path of maximal length; equal lengths go to the smaller tip id.
///
/// Computed from scratch over all tips, independent of the incrementally
/// maintained main branch.
pub fn longest_branch(tree: &ForkTree) -> Vec<&Block> {
    let best = tree
        .tips()
        .iter()
        .map(|id| tree.get(*id).expect("tip is in the tree"))
        .max_by(|a, b| a.index.cmp(&b.index).then_with(|| b.block_id.cmp(&a.block_id)))
        .expect("tree holds at least genesis");
    tree.path_to(best.block_id)
        .into_iter()
        .map(|id| tree.get(id).expect("path block is in the tree"))
        .collect()
}

/// Largest main-branch index `h` such that every main block at index `<= h`
/// was created no later than `now - delta`. `None` when not even genesis
/// qualifies.
pub fn finalized_prefix(tree: &ForkTree, now: Time, delta: Dur) -> Option<u64> {
    if now.as_micros() < delta.as_micros() {
        return None;
    }
    let horizon = now.saturating_sub(delta);
    let main = tree.main_chain();
    // created_at is non-decreasing along a branch, so the qualifying set is a prefix.
    let count = main.partition_point(|id| tree.get(*id).expect("main block").created_at <= horizon);
    if count == 0 {
        None
    } else {
        Some(count as u64 - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("entity {0:?} does not exist")]
    UnknownEntity(EntityId),
    #[error("balance {balance} cannot absorb delta {delta}")]
    InsufficientFunds { balance: u64, delta: i64 },
    #[error("entity is locked by {holder}")]
    LockHeldByOther { holder: TxnId },
    #[error("entity is already locked by {holder}")]
    AlreadyLocked { holder: TxnId },
    #[error("entity lock is held by {holder}")]
    NotLockHolder { holder: TxnId },
}

/// Balances and per-entity locks of one chain. Failed operations leave the
/// ledger untouched.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ledger {
    chain: ChainId,
    balances: Vec<u64>,
    locks: Vec<Option<TxnId>>,
}

impl Ledger {
    pub fn new(chain: ChainId, entities: u32, initial_balance: u64) -> Ledger {
        Ledger {
            chain,
            balances: alloc::vec![initial_balance; entities as usize],
            locks: alloc::vec![None; entities as usize],
        }
    }

    pub fn from_balances(chain: ChainId, balances: Vec<u64>) -> Ledger {
        let n = balances.len();
        Ledger { chain, balances, locks: alloc::vec![None; n] }
    }

    pub fn chain(&self) -> ChainId {
        self.chain
    }

    fn slot(&self, entity: EntityId) -> Result<usize, LedgerError> {
        if entity.chain != self.chain || entity.account as usize >= self.balances.len() {
            return Err(LedgerError::UnknownEntity(entity));
        }
        Ok(entity.account as usize)
    }

    pub fn balance(&self, entity: EntityId) -> Option<u64> {
        self.slot(entity).ok().map(|i| self.balances[i])
    }

    pub fn lock_holder(&self, entity: EntityId) -> Option<TxnId> {
        self.slot(entity).ok().and_then(|i| self.locks[i])
    }

    pub fn balances(&self) -> &[u64] {
        &self.balances
    }

    pub fn total(&self) -> u128 {
        self.balances.iter().map(|&b| b as u128).sum()
    }

    /// Whether `delta` could be applied right now without going negative.
    pub fn covers(&self, entity: EntityId, delta: i64) -> Result<bool, LedgerError> {
        let i = self.slot(entity)?;
        Ok(self.balances[i] as i128 + delta as i128 >= 0)
    }

    pub fn apply_leg(&mut self, entity: EntityId, delta: i64, holder: TxnId) -> Result<(), LedgerError> {
        let i = self.slot(entity)?;
        if let Some(h) = self.locks[i] {
            if h != holder {
                return Err(LedgerError::LockHeldByOther { holder: h });
            }
        }
        let next = self.balances[i] as i128 + delta as i128;
        if next < 0 {
            return Err(LedgerError::InsufficientFunds { balance: self.balances[i], delta });
        }
        self.balances[i] = next as u64;
        Ok(())
    }

    pub fn lock(&mut self, entity: EntityId, txn: TxnId) -> Result<(), LedgerError> {
        let i = self.slot(entity)?;
        match self.locks[i] {
            Some(h) => Err(LedgerError::AlreadyLocked { holder: h }),
            None => {
                self.locks[i] = Some(txn);
                Ok(())
            }
        }
    }

    /// Releasing an already-free entity is a no-op.
    pub fn unlock(&mut self, entity: EntityId, txn: TxnId) -> Result<(), LedgerError> {
        let i = self.slot(entity)?;
        match self.locks[i] {
            Some(h) if h != txn => Err(LedgerError::NotLockHolder { holder: h }),
            _ => {
                self.locks[i] = None;
                Ok(())
            }
        }
    }

    pub fn locked_count(&self) -> usize {
        self.locks.iter().filter(|l| l.is_some()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const C1: ChainId = ChainId(1);

    fn e(account: u32) -> EntityId {
        EntityId { chain: C1, account }
    }

    #[test]
    fn apply_leg_arithmetic() {
        let mut l = Ledger::new(C1, 1, 100);
        l.apply_leg(e(0), -30, TxnId(1)).unwrap();
        assert_eq!(l.balance(e(0)), Some(70));

        let mut l = Ledger::new(C1, 1, 100);
        let err = l.apply_leg(e(0), -130, TxnId(1)).unwrap_err();
        assert_eq!(err, LedgerError::InsufficientFunds { balance: 100, delta: -130 });
        assert_eq!(l.balance(e(0)), Some(100));

        let mut l = Ledger::new(C1, 1, 0);
        l.apply_leg(e(0), 0, TxnId(1)).unwrap();
        assert_eq!(l.balance(e(0)), Some(0));
    }

    #[test]
    fn apply_leg_respects_locks() {
        let mut l = Ledger::new(C1, 2, 100);
        l.lock(e(0), TxnId(1)).unwrap();
        assert_eq!(
            l.apply_leg(e(0), 5, TxnId(2)),
            Err(LedgerError::LockHeldByOther { holder: TxnId(1) })
        );
        l.apply_leg(e(0), 5, TxnId(1)).unwrap();
        assert_eq!(l.balance(e(0)), Some(105));
        assert_eq!(l.apply_leg(e(7), 5, TxnId(1)), Err(LedgerError::UnknownEntity(e(7))));
    }

    #[test]
    fn lock_unlock_cycle() {
        let mut l = Ledger::new(C1, 1, 0);
        l.lock(e(0), TxnId(1)).unwrap();
        assert_eq!(l.lock_holder(e(0)), Some(TxnId(1)));
        assert_eq!(l.lock(e(0), TxnId(2)), Err(LedgerError::AlreadyLocked { holder: TxnId(1) }));
        assert_eq!(l.unlock(e(0), TxnId(2)), Err(LedgerError::NotLockHolder { holder: TxnId(1) }));
        l.unlock(e(0), TxnId(1)).unwrap();
        l.unlock(e(0), TxnId(1)).unwrap();
        l.lock(e(0), TxnId(2)).unwrap();
        assert_eq!(l.lock_holder(e(0)), Some(TxnId(2)));
    }

    fn linear(tree: &mut ForkTree, n: u64, spacing: u64) {
        for i in 1..=n {
            let parent = tree.tip().clone();
            let b = Block::child_of(&parent, vec![], NodeId::new(C1, 0), Time::from_millis(i * spacing));
            tree.insert(b).unwrap();
        }
    }

    #[test]
    fn longest_branch_single_chain() {
        let mut t = ForkTree::new(C1);
        linear(&mut t, 3, 10);
        let path = longest_branch(&t);
        assert_eq!(path.len(), 4);
        assert_eq!(path.iter().map(|b| b.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn longest_branch_prefers_length() {
        let mut t = ForkTree::new(C1);
        linear(&mut t, 2, 10);
        let fork_base = t.main_block_at(1).unwrap().clone();
        // Side branch of length 3 after index 1 reaches index 4; main stays at 2 until extended.
        let mut side = fork_base.clone();
        for k in 0..3 {
            let b = Block::child_of(&side, vec![], NodeId::new(C1, 1), Time::from_millis(100 + k));
            t.insert(b.clone()).unwrap();
            side = b;
        }
        let path = longest_branch(&t);
        assert_eq!(path.len(), 5);
        assert_eq!(path.last().unwrap().block_id, side.block_id);
        assert_eq!(t.tip().block_id, side.block_id);
    }

    #[test]
    fn tie_break_takes_smaller_tip_id() {
        // Two equal-height tips; enumerate both root-to-tip paths and pick the smaller tip id.
        let mut t = ForkTree::new(C1);
        linear(&mut t, 1, 10);
        let base = t.tip().clone();
        let a = Block::child_of(&base, vec![TxnId(1)], NodeId::new(C1, 0), Time::from_millis(20));
        let b = Block::child_of(&base, vec![TxnId(2)], NodeId::new(C1, 1), Time::from_millis(21));
        t.insert(a.clone()).unwrap();
        t.insert(b.clone()).unwrap();
        let expected = core::cmp::min(a.block_id, b.block_id);
        assert_eq!(longest_branch(&t).last().unwrap().block_id, expected);
        assert_eq!(t.tip().block_id, expected);
    }

    #[test]
    fn finalized_prefix_cases() {
        let t = ForkTree::new(C1);
        assert_eq!(finalized_prefix(&t, Time::ZERO, Dur::from_millis(10)), None);

        let mut t = ForkTree::new(C1);
        linear(&mut t, 3, 10);
        assert_eq!(finalized_prefix(&t, Time::from_secs(100), Dur::from_millis(10)), Some(3));

        // Blocks at t = 0, 10, 20 (genesis at 0 plus two children), now = 25, delta = 10.
        let mut t = ForkTree::new(C1);
        linear(&mut t, 2, 10);
        assert_eq!(finalized_prefix(&t, Time::from_millis(25), Dur::from_millis(10)), Some(1));
    }

    #[test]
    fn duplicate_txn_on_branch_rejected() {
        let mut t = ForkTree::new(C1);
        let g = t.tip().clone();
        let a = Block::child_of(&g, vec![TxnId(5)], NodeId::new(C1, 0), Time::from_millis(1));
        t.insert(a.clone()).unwrap();
        let b = Block::child_of(&a, vec![TxnId(5)], NodeId::new(C1, 0), Time::from_millis(2));
        assert!(matches!(t.insert(b), Err(TreeError::DuplicateTxnOnBranch { .. })));
        // Same txn on a sibling branch is fine.
        let c = Block::child_of(&g, vec![TxnId(5)], NodeId::new(C1, 1), Time::from_millis(3));
        t.insert(c).unwrap();
    }

    #[test]
    fn request_validation() {
        let leg = |c: u32, d: i64| Leg { chain: ChainId(c), entity: EntityId { chain: ChainId(c), account: 0 }, delta: d };
        let mut r = TransactionRequest {
            uuid: TxnId(1),
            coordinator: ChainId(1),
            legs: vec![leg(1, -5), leg(2, 5)],
            submit_time: Time::ZERO,
        };
        r.validate().unwrap();
        r.legs[1].delta = 4;
        assert!(matches!(r.validate(), Err(RequestError::NotConserving { .. })));
        r.legs = vec![leg(1, 0)];
        assert!(matches!(r.validate(), Err(RequestError::TooFewChains(_))));
        r.legs = vec![leg(1, -1), leg(1, 1)];
        assert!(matches!(r.validate(), Err(RequestError::DuplicateChain(..))));
    }
}

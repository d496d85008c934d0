use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use num_bigint::BigUint;
use serde::Serialize;
use thiserror::Error;

use super::block::{Block, BlockHeader};
use super::config::NetworkConfig;
use super::tx::{PaymentTransaction, SignedTransaction, Transaction};
use crate::crypto::{Address, CryptoError, Hash256};
use crate::types::Amount;

/// Why a block (or a transaction inside it) was refused.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error("block already known")]
    DuplicateBlock,
    #[error("parent block unknown")]
    UnknownParent,
    #[error("height does not follow parent")]
    BadHeight,
    #[error("timestamp precedes parent")]
    BadTimestamp,
    #[error("difficulty target differs from network target")]
    WrongTarget,
    #[error("header hash exceeds difficulty target")]
    InsufficientWork,
    #[error("merkle root does not match body")]
    BadMerkleRoot,
    #[error("transaction {index}: malformed signer key")]
    MalformedKey { index: usize },
    #[error("transaction {index}: bad signature")]
    BadSignature { index: usize },
    #[error("transaction {index}: amount must be positive")]
    ZeroAmount { index: usize },
    #[error("transaction {index}: insufficient funds")]
    InsufficientFunds { index: usize },
    #[error("transaction {index}: nonce not above previous")]
    BadNonce { index: usize },
    #[error("transaction {index}: balance overflow")]
    BalanceOverflow { index: usize },
    #[error("transaction {index}: rating outside 1..=5")]
    InvalidRating { index: usize },
    #[error("transaction {index}: reviewer never paid subject")]
    UnauthorizedReview { index: usize },
    #[error("transaction {index}: duplicate review")]
    DuplicateTransaction { index: usize },
}

impl RejectReason {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::DuplicateBlock => "DuplicateBlock",
            RejectReason::UnknownParent => "UnknownParent",
            RejectReason::BadHeight => "BadHeight",
            RejectReason::BadTimestamp => "BadTimestamp",
            RejectReason::WrongTarget => "WrongTarget",
            RejectReason::InsufficientWork => "InsufficientWork",
            RejectReason::BadMerkleRoot => "BadMerkleRoot",
            RejectReason::MalformedKey { .. } => "MalformedKey",
            RejectReason::BadSignature { .. } => "BadSignature",
            RejectReason::ZeroAmount { .. } => "ZeroAmount",
            RejectReason::InsufficientFunds { .. } => "InsufficientFunds",
            RejectReason::BadNonce { .. } => "BadNonce",
            RejectReason::BalanceOverflow { .. } => "BalanceOverflow",
            RejectReason::InvalidRating { .. } => "InvalidRating",
            RejectReason::UnauthorizedReview { .. } => "UnauthorizedReview",
            RejectReason::DuplicateTransaction { .. } => "DuplicateTransaction",
        }
    }

    fn at(self, index: usize) -> RejectReason {
        use RejectReason::*;
        match self {
            MalformedKey { .. } => MalformedKey { index },
            BadSignature { .. } => BadSignature { index },
            ZeroAmount { .. } => ZeroAmount { index },
            InsufficientFunds { .. } => InsufficientFunds { index },
            BadNonce { .. } => BadNonce { index },
            BalanceOverflow { .. } => BalanceOverflow { index },
            InvalidRating { .. } => InvalidRating { index },
            UnauthorizedReview { .. } => UnauthorizedReview { index },
            DuplicateTransaction { .. } => DuplicateTransaction { index },
            other => other,
        }
    }
}

/// Account state after some prefix of a chain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LedgerState {
    pub balances: BTreeMap<Address, Amount>,
    /// Highest nonce each sender has used.
    pub nonces: BTreeMap<Address, u64>,
    #[serde(skip)]
    paid_pairs: BTreeSet<(Address, Address)>,
    #[serde(skip)]
    seen_reviews: BTreeSet<Hash256>,
}

impl LedgerState {
    fn genesis(config: &NetworkConfig) -> Self {
        let mut s = LedgerState::default();
        for a in &config.allocations {
            s.balances.insert(a.address, a.amount);
        }
        s
    }

    pub fn balance(&self, addr: &Address) -> Amount {
        self.balances.get(addr).copied().unwrap_or(0)
    }

    /// Smallest nonce the next payment from `addr` may use.
    pub fn next_nonce(&self, addr: &Address) -> u64 {
        self.nonces.get(addr).map_or(0, |n| n + 1)
    }

    pub fn has_paid(&self, from: &Address, to: &Address) -> bool {
        self.paid_pairs.contains(&(*from, *to))
    }

    /// Applies one transaction; on error the state is unchanged.
    pub fn apply(&mut self, stx: &SignedTransaction) -> Result<(), RejectReason> {
        match stx.check_authorization() {
            Ok(true) => {}
            Ok(false) => return Err(RejectReason::BadSignature { index: 0 }),
            Err(CryptoError::MalformedKey) => return Err(RejectReason::MalformedKey { index: 0 }),
            Err(_) => return Err(RejectReason::BadSignature { index: 0 }),
        }
        match &stx.tx {
            Transaction::Payment(p) => self.apply_payment(p),
            Transaction::Review(r) => {
                if !(1..=5).contains(&r.rating) {
                    return Err(RejectReason::InvalidRating { index: 0 });
                }
                if !self.has_paid(&r.reviewer, &r.subject) {
                    return Err(RejectReason::UnauthorizedReview { index: 0 });
                }
                if !self.seen_reviews.insert(stx.tx.tx_hash()) {
                    return Err(RejectReason::DuplicateTransaction { index: 0 });
                }
                Ok(())
            }
        }
    }

    fn apply_payment(&mut self, p: &PaymentTransaction) -> Result<(), RejectReason> {
        if p.amount == 0 {
            return Err(RejectReason::ZeroAmount { index: 0 });
        }
        if let Some(last) = self.nonces.get(&p.from) {
            if p.nonce <= *last {
                return Err(RejectReason::BadNonce { index: 0 });
            }
        }
        let from_bal = self.balance(&p.from);
        if from_bal < p.amount {
            return Err(RejectReason::InsufficientFunds { index: 0 });
        }
        if p.from != p.to {
            let to_bal = self.balance(&p.to);
            let new_to = to_bal
                .checked_add(p.amount)
                .ok_or(RejectReason::BalanceOverflow { index: 0 })?;
            self.balances.insert(p.from, from_bal - p.amount);
            self.balances.insert(p.to, new_to);
        }
        self.nonces.insert(p.from, p.nonce);
        self.paid_pairs.insert((p.from, p.to));
        Ok(())
    }

    pub fn total_balance(&self) -> u128 {
        self.balances.values().map(|&v| u128::from(v)).sum()
    }
}

#[derive(Debug, Clone)]
struct BlockEntry {
    block: Block,
    cumulative_work: BigUint,
    ledger: Arc<LedgerState>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyOutcome {
    /// Block extends the canonical tip.
    Extended,
    /// Block made a competing branch heaviest; `common_height` is the last
    /// height both branches share.
    Reorganized {
        common_height: u64,
        old_tip: Hash256,
    },
    /// Valid block on a branch that is not (yet) heaviest.
    SideBranch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReviewRecord {
    pub rating: u8,
    pub comment_hash: Hash256,
    pub reviewer: Address,
}

/// Serializable summary used for determinism checks and JSON export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainSnapshot {
    pub tip: Hash256,
    pub height: u64,
    pub canonical: Vec<Hash256>,
    pub ledger: LedgerState,
}

/// Block tree with a canonical chain chosen by cumulative work.
///
/// Every stored block keeps the ledger state reached after it, so side
/// branches validate against their own history and a reorg is just a tip
/// switch.
#[derive(Debug, Clone)]
pub struct ChainState {
    config: Arc<NetworkConfig>,
    genesis: Hash256,
    entries: HashMap<Hash256, BlockEntry>,
    canonical: Vec<Hash256>,
    tx_index: HashMap<Hash256, Vec<(Hash256, usize)>>,
}

impl ChainState {
    pub fn new(config: NetworkConfig) -> Self {
        let genesis_header = config.genesis_header();
        let genesis = genesis_header.hash();
        let ledger = Arc::new(LedgerState::genesis(&config));
        let mut entries = HashMap::new();
        entries.insert(
            genesis,
            BlockEntry {
                block: Block {
                    header: genesis_header.clone(),
                    transactions: Vec::new(),
                },
                cumulative_work: genesis_header.work(),
                ledger,
            },
        );
        ChainState {
            config: Arc::new(config),
            genesis,
            entries,
            canonical: vec![genesis],
            tx_index: HashMap::new(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn genesis_hash(&self) -> Hash256 {
        self.genesis
    }

    pub fn tip_hash(&self) -> Hash256 {
        *self.canonical.last().expect("genesis always present")
    }

    pub fn tip_header(&self) -> &BlockHeader {
        &self.entries[&self.tip_hash()].block.header
    }

    pub fn height(&self) -> u64 {
        (self.canonical.len() - 1) as u64
    }

    pub fn tip_work(&self) -> &BigUint {
        &self.entries[&self.tip_hash()].cumulative_work
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.entries[&self.tip_hash()].ledger
    }

    pub fn balance(&self, addr: &Address) -> Amount {
        self.ledger().balance(addr)
    }

    pub fn next_nonce(&self, addr: &Address) -> u64 {
        self.ledger().next_nonce(addr)
    }

    pub fn contains(&self, hash: &Hash256) -> bool {
        self.entries.contains_key(hash)
    }

    pub fn block(&self, hash: &Hash256) -> Option<&Block> {
        self.entries.get(hash).map(|e| &e.block)
    }

    pub fn canonical_hash_at(&self, height: u64) -> Option<Hash256> {
        self.canonical.get(height as usize).copied()
    }

    pub fn canonical_block_at(&self, height: u64) -> Option<&Block> {
        self.canonical_hash_at(height).and_then(|h| self.block(&h))
    }

    pub fn is_canonical(&self, hash: &Hash256) -> bool {
        self.entries
            .get(hash)
            .and_then(|e| self.canonical.get(e.block.header.height as usize))
            == Some(hash)
    }

    pub fn canonical_blocks(&self) -> impl Iterator<Item = &Block> + '_ {
        self.canonical.iter().map(move |h| &self.entries[h].block)
    }

    pub fn block_count(&self) -> usize {
        self.entries.len()
    }

    pub fn cumulative_work(&self, hash: &Hash256) -> Option<&BigUint> {
        self.entries.get(hash).map(|e| &e.cumulative_work)
    }

    /// Validates `block` against its parent's state and stores it. The tip
    /// moves only to a branch with strictly more cumulative work, so ties go
    /// to whichever branch was seen first.
    pub fn validate_and_apply(&mut self, block: Block) -> Result<ApplyOutcome, RejectReason> {
        let hash = block.hash();
        if self.entries.contains_key(&hash) {
            return Err(RejectReason::DuplicateBlock);
        }
        let parent = self
            .entries
            .get(&block.header.prev_hash)
            .ok_or(RejectReason::UnknownParent)?;
        let h = &block.header;
        if h.height != parent.block.header.height + 1 {
            return Err(RejectReason::BadHeight);
        }
        if h.timestamp < parent.block.header.timestamp {
            return Err(RejectReason::BadTimestamp);
        }
        if h.difficulty_target != self.config.target {
            return Err(RejectReason::WrongTarget);
        }
        if !h.meets_target() {
            return Err(RejectReason::InsufficientWork);
        }
        if Block::body_root(&block.transactions) != h.merkle_root {
            return Err(RejectReason::BadMerkleRoot);
        }
        let mut ledger = (*parent.ledger).clone();
        for (i, stx) in block.transactions.iter().enumerate() {
            ledger.apply(stx).map_err(|e| e.at(i))?;
        }
        let cumulative_work = &parent.cumulative_work + h.work();

        let old_tip = self.tip_hash();
        let extends_tip = h.prev_hash == old_tip;
        let heavier = &cumulative_work > self.tip_work();

        for (i, stx) in block.transactions.iter().enumerate() {
            self.tx_index
                .entry(stx.tx.tx_hash())
                .or_default()
                .push((hash, i));
        }
        self.entries.insert(
            hash,
            BlockEntry {
                block,
                cumulative_work,
                ledger: Arc::new(ledger),
            },
        );

        if !heavier {
            return Ok(ApplyOutcome::SideBranch);
        }
        if extends_tip {
            self.canonical.push(hash);
            return Ok(ApplyOutcome::Extended);
        }
        let common_height = self.rebuild_canonical(hash);
        Ok(ApplyOutcome::Reorganized {
            common_height,
            old_tip,
        })
    }

    /// Resets the canonical index to end at `tip`; returns the fork height.
    fn rebuild_canonical(&mut self, tip: Hash256) -> u64 {
        let mut branch = Vec::new();
        let mut cursor = tip;
        loop {
            let header = &self.entries[&cursor].block.header;
            let height = header.height as usize;
            if self.canonical.get(height) == Some(&cursor) {
                break;
            }
            branch.push(cursor);
            cursor = header.prev_hash;
        }
        let common = self.entries[&cursor].block.header.height;
        self.canonical.truncate(common as usize + 1);
        self.canonical.extend(branch.into_iter().rev());
        common
    }

    /// Locates a transaction on the canonical chain: (height, block hash,
    /// position in block).
    pub fn locate_transaction(&self, tx_hash: &Hash256) -> Option<(u64, Hash256, usize)> {
        self.tx_index.get(tx_hash)?.iter().find_map(|(bh, idx)| {
            self.is_canonical(bh)
                .then(|| (self.entries[bh].block.header.height, *bh, *idx))
        })
    }

    /// Blocks mined on top of the transaction's block, if it is canonical.
    pub fn confirmations(&self, tx_hash: &Hash256) -> Option<u64> {
        self.locate_transaction(tx_hash)
            .map(|(height, _, _)| self.height() - height)
    }

    /// Canonical payments from `from` to `to` with their depth.
    pub fn payments_between(&self, from: &Address, to: &Address) -> Vec<(PaymentTransaction, u64)> {
        let tip = self.height();
        self.canonical_blocks()
            .flat_map(|b| {
                let height = b.header.height;
                b.transactions.iter().filter_map(move |s| match &s.tx {
                    Transaction::Payment(p) if &p.from == from && &p.to == to => {
                        Some((p.clone(), tip - height))
                    }
                    _ => None,
                })
            })
            .collect()
    }

    /// Confirmed reviews about `subject`, oldest first.
    pub fn query_reviews(&self, subject: &Address) -> Vec<ReviewRecord> {
        self.canonical_blocks()
            .flat_map(|b| b.transactions.iter())
            .filter_map(|s| match &s.tx {
                Transaction::Review(r) if &r.subject == subject => Some(ReviewRecord {
                    rating: r.rating,
                    comment_hash: r.comment_hash,
                    reviewer: r.reviewer,
                }),
                _ => None,
            })
            .collect()
    }

    /// Mean rating of `subject`; 0.0 when it has no reviews.
    pub fn mean_rating(&self, subject: &Address) -> f64 {
        let reviews = self.query_reviews(subject);
        if reviews.is_empty() {
            return 0.0;
        }
        reviews.iter().map(|r| f64::from(r.rating)).sum::<f64>() / reviews.len() as f64
    }

    /// Greedily picks candidates that apply cleanly on top of the tip, in
    /// order, up to `limit`.
    pub fn select_transactions(
        &self,
        candidates: &[SignedTransaction],
        limit: usize,
    ) -> Vec<SignedTransaction> {
        let mut ledger = self.ledger().clone();
        let mut out = Vec::new();
        for c in candidates {
            if out.len() >= limit {
                break;
            }
            if ledger.apply(c).is_ok() {
                out.push(c.clone());
            }
        }
        out
    }

    /// Headers of the canonical chain from genesis to tip.
    pub fn canonical_headers(&self) -> Vec<BlockHeader> {
        self.canonical_blocks().map(|b| b.header.clone()).collect()
    }

    pub fn snapshot(&self) -> ChainSnapshot {
        ChainSnapshot {
            tip: self.tip_hash(),
            height: self.height(),
            canonical: self.canonical.clone(),
            ledger: self.ledger().clone(),
        }
    }

    /// Rebuilds the tip ledger by replaying canonical blocks from genesis.
    pub fn replay_canonical(&self) -> Result<LedgerState, RejectReason> {
        let mut ledger = LedgerState::genesis(&self.config);
        for b in self.canonical_blocks().skip(1) {
            for (i, stx) in b.transactions.iter().enumerate() {
                ledger.apply(stx).map_err(|e| e.at(i))?;
            }
        }
        Ok(ledger)
    }
}

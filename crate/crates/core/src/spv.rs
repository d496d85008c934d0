//! Payment evidence: a payment, its Merkle authentication path, and the
//! block it was mined in, checked against a header store with a
//! confirmation-depth policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{BlockHeader, ChainState, PaymentTransaction, Transaction};
use crate::crypto::{hash, Hash256};
use crate::merkle::{self, PathStep, Side};
use crate::wire::{Reader, WireError, Writer};

/// Read access to the verifier's best chain of headers.
pub trait HeaderView {
    fn best_height(&self) -> u64;
    /// The best-chain header at `height` with its hash, if still held.
    fn best_header_at(&self, height: u64) -> Option<(Hash256, &BlockHeader)>;
}

impl HeaderView for ChainState {
    fn best_height(&self) -> u64 {
        self.height()
    }

    fn best_header_at(&self, height: u64) -> Option<(Hash256, &BlockHeader)> {
        let h = self.canonical_hash_at(height)?;
        self.block(&h).map(|b| (h, &b.header))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentEvidence {
    pub tx: PaymentTransaction,
    pub path: Vec<PathStep>,
    pub leaf_index: u32,
    pub block_height: u64,
    pub block_hash: Hash256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvidenceStatus {
    Valid,
    BadPath,
    UnknownBlock,
    InsufficientConfirmations,
}

impl EvidenceStatus {
    pub fn to_byte(self) -> u8 {
        match self {
            EvidenceStatus::Valid => 0,
            EvidenceStatus::BadPath => 1,
            EvidenceStatus::UnknownBlock => 2,
            EvidenceStatus::InsufficientConfirmations => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => EvidenceStatus::Valid,
            1 => EvidenceStatus::BadPath,
            2 => EvidenceStatus::UnknownBlock,
            3 => EvidenceStatus::InsufficientConfirmations,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error("transaction {0} is not on the canonical chain")]
    NotFound(Hash256),
    #[error("transaction {0} is not a payment")]
    NotAPayment(Hash256),
}

/// Builds evidence for a payment confirmed on `chain`'s canonical branch.
pub fn build_evidence(chain: &ChainState, tx_hash: &Hash256) -> Result<PaymentEvidence, EvidenceError> {
    let (height, block_hash, index) = chain
        .locate_transaction(tx_hash)
        .ok_or(EvidenceError::NotFound(*tx_hash))?;
    let block = chain.block(&block_hash).expect("indexed block exists");
    let tx = match &block.transactions[index].tx {
        Transaction::Payment(p) => p.clone(),
        Transaction::Review(_) => return Err(EvidenceError::NotAPayment(*tx_hash)),
    };
    let leaves = block.leaf_hashes();
    let path = merkle::path(&leaves, index).expect("index within block");
    Ok(PaymentEvidence {
        tx,
        path,
        leaf_index: index as u32,
        block_height: height,
        block_hash,
    })
}

impl PaymentEvidence {
    pub fn leaf_hash(&self) -> Hash256 {
        hash(&self.tx.encode())
    }

    /// Root obtained by folding the leaf up the path.
    pub fn folded_root(&self) -> Hash256 {
        merkle::fold(self.leaf_hash(), &self.path)
    }

    /// Side flags must agree with the bits of `leaf_index`.
    fn path_matches_index(&self) -> bool {
        if self.path.len() < 32 && (u64::from(self.leaf_index) >> self.path.len()) != 0 {
            return false;
        }
        self.path.iter().enumerate().all(|(level, step)| {
            let bit = level < 32 && (self.leaf_index >> level) & 1 == 1;
            let expected = if bit { Side::Left } else { Side::Right };
            step.side == expected
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.tx.encode())
            .u32(self.leaf_index)
            .u16(u16::try_from(self.path.len()).expect("path shorter than 65536"));
        for step in &self.path {
            w.u8(step.side.to_byte()).raw(&step.sibling.0);
        }
        w.u64(self.block_height).raw(&self.block_hash.0);
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let tx = PaymentTransaction::read(r)?;
        let leaf_index = r.u32()?;
        let n = r.u16()? as usize;
        let mut path = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let side_byte = r.u8()?;
            let side = Side::from_byte(side_byte).ok_or(WireError::UnknownTag {
                what: "path side",
                tag: side_byte,
            })?;
            path.push(PathStep {
                sibling: Hash256(r.array()?),
                side,
            });
        }
        Ok(PaymentEvidence {
            tx,
            path,
            leaf_index,
            block_height: r.u64()?,
            block_hash: Hash256(r.array()?),
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let ev = Self::read(&mut r)?;
        r.finish()?;
        Ok(ev)
    }
}

/// Checks evidence against the verifier's best chain.
///
/// The block must sit on the best chain at the claimed height with the
/// claimed hash, the path must fold to its Merkle root, and at least
/// `confirm_depth` blocks must be mined on top of it.
pub fn verify_evidence<H: HeaderView + ?Sized>(
    ev: &PaymentEvidence,
    headers: &H,
    confirm_depth: u64,
) -> EvidenceStatus {
    let Some((best_hash, header)) = headers.best_header_at(ev.block_height) else {
        return EvidenceStatus::UnknownBlock;
    };
    if best_hash != ev.block_hash {
        return EvidenceStatus::UnknownBlock;
    }
    if !ev.path_matches_index() || ev.folded_root() != header.merkle_root {
        return EvidenceStatus::BadPath;
    }
    let depth = headers.best_height().saturating_sub(ev.block_height);
    if depth < confirm_depth {
        return EvidenceStatus::InsufficientConfirmations;
    }
    EvidenceStatus::Valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{mine_block, Allocation, NetworkConfig, SignedTransaction, Target};
    use crate::crypto::KeyPair;

    fn setup(n_txs: usize) -> (ChainState, Vec<Hash256>, KeyPair) {
        let payer = KeyPair::from_seed([7; 32]);
        let cfg = NetworkConfig::new(
            Target::pow2(252),
            vec![Allocation {
                address: payer.address(),
                amount: 1_000_000,
            }],
        );
        let mut chain = ChainState::new(cfg);
        let txs: Vec<_> = (0..n_txs)
            .map(|i| {
                SignedTransaction::payment(
                    &payer,
                    KeyPair::from_seed([i as u8; 32]).address(),
                    1 + i as u64,
                    i as u64,
                )
            })
            .collect();
        let hashes = txs.iter().map(|t| t.tx.tx_hash()).collect();
        let b = mine_block(chain.tip_header(), txs, chain.config().target, 10).unwrap();
        chain.validate_and_apply(b).unwrap();
        (chain, hashes, payer)
    }

    fn add_empty_blocks(chain: &mut ChainState, n: usize) {
        for _ in 0..n {
            let t = chain.tip_header().clone();
            let b = mine_block(&t, vec![], chain.config().target, t.timestamp + 10).unwrap();
            chain.validate_and_apply(b).unwrap();
        }
    }

    #[test]
    fn single_tx_block_has_empty_path() {
        let (chain, hashes, _) = setup(1);
        let ev = build_evidence(&chain, &hashes[0]).unwrap();
        assert!(ev.path.is_empty());
        assert_eq!(ev.folded_root(), ev.leaf_hash());
        assert_eq!(verify_evidence(&ev, &chain, 0), EvidenceStatus::Valid);
    }

    #[test]
    fn eight_tx_block_leaf_five() {
        let (chain, hashes, _) = setup(8);
        let ev = build_evidence(&chain, &hashes[5]).unwrap();
        assert_eq!(ev.path.len(), 3);
        assert_eq!(ev.leaf_index, 5);
        let header = &chain.canonical_block_at(1).unwrap().header;
        assert_eq!(ev.folded_root(), header.merkle_root);
    }

    #[test]
    fn depth_policy() {
        let (mut chain, hashes, _) = setup(3);
        let ev = build_evidence(&chain, &hashes[1]).unwrap();
        assert_eq!(
            verify_evidence(&ev, &chain, 6),
            EvidenceStatus::InsufficientConfirmations
        );
        add_empty_blocks(&mut chain, 5);
        assert_eq!(
            verify_evidence(&ev, &chain, 6),
            EvidenceStatus::InsufficientConfirmations
        );
        add_empty_blocks(&mut chain, 1);
        assert_eq!(verify_evidence(&ev, &chain, 6), EvidenceStatus::Valid);
    }

    #[test]
    fn flipped_sibling_byte_is_bad_path() {
        let (chain, hashes, _) = setup(5);
        let ev = build_evidence(&chain, &hashes[2]).unwrap();
        for level in 0..ev.path.len() {
            for byte in 0..32 {
                let mut bad = ev.clone();
                bad.path[level].sibling.0[byte] ^= 0x01;
                assert_eq!(verify_evidence(&bad, &chain, 0), EvidenceStatus::BadPath);
            }
        }
    }

    #[test]
    fn wrong_side_or_index_is_bad_path() {
        let (chain, hashes, _) = setup(4);
        let ev = build_evidence(&chain, &hashes[1]).unwrap();
        let mut flipped = ev.clone();
        flipped.path[0].side = Side::Right;
        assert_eq!(verify_evidence(&flipped, &chain, 0), EvidenceStatus::BadPath);
        let mut idx = ev.clone();
        idx.leaf_index = 9;
        assert_eq!(verify_evidence(&idx, &chain, 0), EvidenceStatus::BadPath);
    }

    #[test]
    fn altered_terms_break_path() {
        let (chain, hashes, _) = setup(4);
        let ev = build_evidence(&chain, &hashes[3]).unwrap();
        let mut more = ev.clone();
        more.tx.amount += 1;
        assert_eq!(verify_evidence(&more, &chain, 0), EvidenceStatus::BadPath);
    }

    #[test]
    fn unknown_block() {
        let (chain, hashes, _) = setup(2);
        let ev = build_evidence(&chain, &hashes[0]).unwrap();
        let mut far = ev.clone();
        far.block_height = 50;
        assert_eq!(verify_evidence(&far, &chain, 0), EvidenceStatus::UnknownBlock);
        let mut other = ev;
        other.block_hash.0[0] ^= 1;
        assert_eq!(verify_evidence(&other, &chain, 0), EvidenceStatus::UnknownBlock);
    }

    #[test]
    fn missing_tx_is_error() {
        let (chain, _, _) = setup(1);
        assert!(matches!(
            build_evidence(&chain, &hash(b"nope")),
            Err(EvidenceError::NotFound(_))
        ));
    }

    #[test]
    fn wire_layout() {
        let (chain, hashes, _) = setup(3);
        let ev = build_evidence(&chain, &hashes[2]).unwrap();
        let enc = ev.encode();
        assert_eq!(enc.len(), 121 + 4 + 2 + 33 * ev.path.len() + 8 + 32);
        assert_eq!(&enc[121..125], &2u32.to_be_bytes());
        assert_eq!(PaymentEvidence::decode(&enc).unwrap(), ev);
    }
}

use num_bigint::BigUint;
use thiserror::Error;

use super::tx::{SignedTransaction, Transaction};
use crate::crypto::{hash, Hash256};
use crate::merkle;
use crate::types::hex_bytes;
use crate::wire::{Reader, WireError, Writer};

pub const HEADER_LEN: usize = 8 + 32 + 32 + 8 + 32 + 8;

hex_bytes!(
    /// 256-bit big-endian proof-of-work threshold. A header is valid when
    /// its hash, read as a big-endian integer, is at most the target.
    Target,
    32
);

impl Target {
    pub const MAX: Target = Target([0xff; 32]);

    pub fn from_biguint(v: &BigUint) -> Option<Target> {
        let bytes = v.to_bytes_be();
        if bytes.len() > 32 {
            return None;
        }
        let mut out = [0u8; 32];
        out[32 - bytes.len()..].copy_from_slice(&bytes);
        Some(Target(out))
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }

    /// `2^exp`, saturating to [`Target::MAX`] at 256.
    pub fn pow2(exp: u32) -> Target {
        if exp >= 256 {
            return Target::MAX;
        }
        Target::from_biguint(&(BigUint::from(1u8) << exp)).expect("fits")
    }

    /// Target made `2^shift` times easier, saturating at the maximum.
    pub fn easier_by_shift(&self, shift: u32) -> Target {
        let v = self.to_biguint() << shift;
        Target::from_biguint(&v).unwrap_or(Target::MAX)
    }

    /// Expected hashes to meet this target: floor(2^256 / (target + 1)).
    pub fn work(&self) -> BigUint {
        (BigUint::from(1u8) << 256u32) / (self.to_biguint() + 1u8)
    }

    pub fn is_met_by(&self, h: &Hash256) -> bool {
        h.0 <= self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Hash256,
    pub merkle_root: Hash256,
    pub timestamp: u64,
    pub difficulty_target: Target,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut w = Writer::with_capacity(HEADER_LEN);
        w.u64(self.height)
            .raw(&self.prev_hash.0)
            .raw(&self.merkle_root.0)
            .u64(self.timestamp)
            .raw(&self.difficulty_target.0)
            .u64(self.nonce);
        w.finish().try_into().expect("header is fixed width")
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(BlockHeader {
            height: r.u64()?,
            prev_hash: Hash256(r.array()?),
            merkle_root: Hash256(r.array()?),
            timestamp: r.u64()?,
            difficulty_target: Target(r.array()?),
            nonce: r.u64()?,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let h = Self::read(&mut r)?;
        r.finish()?;
        Ok(h)
    }

    pub fn hash(&self) -> Hash256 {
        hash(&self.encode())
    }

    pub fn meets_target(&self) -> bool {
        self.difficulty_target.is_met_by(&self.hash())
    }

    pub fn work(&self) -> BigUint {
        self.difficulty_target.work()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("cannot build a Merkle root over zero transactions")]
    Empty,
}

/// Merkle root over canonical transaction encodings.
pub fn merkle_root(txs: &[Transaction]) -> Result<Hash256, MerkleError> {
    let leaves: Vec<Hash256> = txs.iter().map(Transaction::tx_hash).collect();
    merkle::root(&leaves).ok_or(MerkleError::Empty)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<SignedTransaction>,
}

impl Block {
    /// Root committed in the header. A block with no transactions commits to
    /// the all-zero hash.
    pub fn body_root(txs: &[SignedTransaction]) -> Hash256 {
        let leaves: Vec<Hash256> = txs.iter().map(|s| s.tx.tx_hash()).collect();
        merkle::root(&leaves).unwrap_or(Hash256::ZERO)
    }

    pub fn leaf_hashes(&self) -> Vec<Hash256> {
        self.transactions.iter().map(|s| s.tx.tx_hash()).collect()
    }

    pub fn hash(&self) -> Hash256 {
        self.header.hash()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&self.header.encode());
        w.u32(self.transactions.len() as u32);
        for t in &self.transactions {
            w.raw(&t.encode());
        }
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let header = BlockHeader::read(r)?;
        let n = r.u32()? as usize;
        if n > r.remaining() {
            return Err(WireError::invalid("block", "transaction count exceeds input"));
        }
        let transactions = (0..n)
            .map(|_| SignedTransaction::read(r))
            .collect::<Result<_, _>>()?;
        Ok(Block {
            header,
            transactions,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let b = Self::read(&mut r)?;
        r.finish()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MineError {
    #[error("nonce space exhausted without meeting the target")]
    Exhausted,
}

/// Searches nonces from zero upward until the header meets `target`.
pub fn mine_block(
    parent: &BlockHeader,
    transactions: Vec<SignedTransaction>,
    target: Target,
    timestamp: u64,
) -> Result<Block, MineError> {
    mine_block_within(parent, transactions, target, timestamp, u64::MAX)
}

/// As [`mine_block`] but gives up after `max_attempts` nonces.
pub fn mine_block_within(
    parent: &BlockHeader,
    transactions: Vec<SignedTransaction>,
    target: Target,
    timestamp: u64,
    max_attempts: u64,
) -> Result<Block, MineError> {
    let mut header = BlockHeader {
        height: parent.height + 1,
        prev_hash: parent.hash(),
        merkle_root: Block::body_root(&transactions),
        timestamp,
        difficulty_target: target,
        nonce: 0,
    };
    for nonce in 0..max_attempts {
        header.nonce = nonce;
        if header.meets_target() {
            return Ok(Block {
                header,
                transactions,
            });
        }
    }
    Err(MineError::Exhausted)
}

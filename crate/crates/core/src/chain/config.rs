use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{BlockHeader, Target};
use crate::crypto::{hash, Address, Hash256, PublicKey};
use crate::types::{Amount, Endpoint};
use crate::wire::Writer;

pub const DEFAULT_CONFIRM_DEPTH: u64 = 6;
pub const DEFAULT_FIFO_CAPACITY: usize = 144;
pub const DEFAULT_TRADE_TIMEOUT_SECS: u64 = 600;
pub const DEFAULT_SERVICE_FEE: Amount = 10;
pub const PROGRAM_VERSION: &str = "bdtf-trading-program/1.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub address: Address,
    pub amount: Amount,
}

/// A trusted exchange advertised to buyers and sellers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeListing {
    pub id: String,
    pub owner: Address,
    pub endpoint: Endpoint,
}

/// Genesis and protocol parameters shared by every node and enclave.
///
/// Only `target_hex`, `allocations` and `checkpoint_height` are required in
/// JSON; the rest fall back to the defaults above.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(rename = "target_hex")]
    pub target: Target,
    pub allocations: Vec<Allocation>,
    pub checkpoint_height: u64,
    #[serde(default = "default_confirm_depth")]
    pub confirm_depth: u64,
    #[serde(default = "default_service_fee")]
    pub service_fee: Amount,
    #[serde(default = "default_fifo_capacity")]
    pub fifo_capacity: usize,
    #[serde(default = "default_trade_timeout")]
    pub trade_timeout_secs: u64,
    #[serde(default)]
    pub genesis_timestamp: u64,
    /// Version string of the open-source trading program; clients derive the
    /// expected enclave measurement from it.
    #[serde(default = "default_program_version")]
    pub program_version: String,
    /// Public key of the simulated hardware root of trust.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_public_key: Option<PublicKey>,
    #[serde(default)]
    pub exchanges: Vec<ExchangeListing>,
}

fn default_confirm_depth() -> u64 {
    DEFAULT_CONFIRM_DEPTH
}
fn default_service_fee() -> Amount {
    DEFAULT_SERVICE_FEE
}
fn default_fifo_capacity() -> usize {
    DEFAULT_FIFO_CAPACITY
}
fn default_trade_timeout() -> u64 {
    DEFAULT_TRADE_TIMEOUT_SECS
}
fn default_program_version() -> String {
    PROGRAM_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid network config JSON: {0}")]
    Json(String),
    #[error("address {0} allocated twice")]
    DuplicateAllocation(Address),
    #[error("total allocation overflows u64")]
    SupplyOverflow,
    #[error("confirmation depth must be at least 1")]
    ZeroConfirmDepth,
    #[error("FIFO capacity must exceed the confirmation depth")]
    FifoTooSmall,
}

impl NetworkConfig {
    pub fn new(target: Target, allocations: Vec<Allocation>) -> Self {
        NetworkConfig {
            target,
            allocations,
            checkpoint_height: 0,
            confirm_depth: DEFAULT_CONFIRM_DEPTH,
            service_fee: DEFAULT_SERVICE_FEE,
            fifo_capacity: DEFAULT_FIFO_CAPACITY,
            trade_timeout_secs: DEFAULT_TRADE_TIMEOUT_SECS,
            genesis_timestamp: 0,
            program_version: PROGRAM_VERSION.to_string(),
            root_public_key: None,
            exchanges: Vec::new(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: NetworkConfig =
            serde_json::from_str(s).map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut total: Amount = 0;
        for a in &self.allocations {
            if !seen.insert(a.address) {
                return Err(ConfigError::DuplicateAllocation(a.address));
            }
            total = total
                .checked_add(a.amount)
                .ok_or(ConfigError::SupplyOverflow)?;
        }
        if self.confirm_depth == 0 {
            return Err(ConfigError::ZeroConfirmDepth);
        }
        if self.fifo_capacity as u64 <= self.confirm_depth {
            return Err(ConfigError::FifoTooSmall);
        }
        Ok(())
    }

    pub fn total_supply(&self) -> Amount {
        self.allocations.iter().map(|a| a.amount).sum()
    }

    fn allocation_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.allocations.len() as u32);
        for a in &self.allocations {
            w.raw(&a.address.0).u64(a.amount);
        }
        w.finish()
    }

    /// Digest over the parameters that change ledger or enclave behavior:
    /// target, genesis, checkpoint height, service fee, trade timeout and
    /// allocations. Exchange listings and the root key are excluded.
    pub fn digest(&self) -> Hash256 {
        let mut w = Writer::new();
        w.raw(&self.target.0)
            .u64(self.genesis_timestamp)
            .u64(self.checkpoint_height)
            .u64(self.service_fee)
            .u64(self.trade_timeout_secs)
            .raw(&self.allocation_bytes());
        hash(&w.finish())
    }

    /// Genesis commits to the allocation table through its Merkle root slot.
    pub fn genesis_header(&self) -> BlockHeader {
        BlockHeader {
            height: 0,
            prev_hash: Hash256::ZERO,
            merkle_root: hash(&self.allocation_bytes()),
            timestamp: self.genesis_timestamp,
            difficulty_target: self.target,
            nonce: 0,
        }
    }

    pub fn exchange(&self, id: &str) -> Option<&ExchangeListing> {
        self.exchanges.iter().find(|e| e.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let json = format!(
            r#"{{"target_hex":"{}","allocations":[{{"address":"{}","amount":50}}],"checkpoint_height":0}}"#,
            "00".to_string() + &"ff".repeat(31),
            "11".repeat(20)
        );
        let cfg = NetworkConfig::from_json(&json).unwrap();
        assert_eq!(cfg.confirm_depth, 6);
        assert_eq!(cfg.fifo_capacity, 144);
        assert_eq!(cfg.trade_timeout_secs, 600);
        assert_eq!(cfg.total_supply(), 50);
    }

    #[test]
    fn duplicate_allocation_rejected() {
        let a = Allocation {
            address: Address([1; 20]),
            amount: 1,
        };
        let cfg = NetworkConfig::new(Target::MAX, vec![a.clone(), a]);
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::DuplicateAllocation(_))
        ));
    }

    #[test]
    fn digest_tracks_allocations() {
        let mut cfg = NetworkConfig::new(Target::MAX, vec![]);
        let d0 = cfg.digest();
        cfg.allocations.push(Allocation {
            address: Address([1; 20]),
            amount: 1,
        });
        assert_ne!(cfg.digest(), d0);
        assert_ne!(cfg.genesis_header().hash(), NetworkConfig::new(Target::MAX, vec![]).genesis_header().hash());
    }

    #[test]
    fn json_roundtrip() {
        let cfg = NetworkConfig::new(Target::pow2(240), vec![]);
        assert_eq!(NetworkConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

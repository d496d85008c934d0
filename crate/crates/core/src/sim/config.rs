use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    Target, DEFAULT_CONFIRM_DEPTH, DEFAULT_FIFO_CAPACITY, DEFAULT_SERVICE_FEE,
    DEFAULT_TRADE_TIMEOUT_SECS,
};
use crate::net::MessageType;
use crate::types::Amount;

/// Highest step number in the trading workflow.
pub const LAST_STEP: u8 = 15;

/// Most exchanges a single trade may use.
pub const MAX_TRADE_EXCHANGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Buyer,
    Seller,
    Exchange,
}

impl Party {
    pub const ALL: [Party; 3] = [Party::Buyer, Party::Seller, Party::Exchange];

    pub fn name(self) -> &'static str {
        match self {
            Party::Buyer => "buyer",
            Party::Seller => "seller",
            Party::Exchange => "exchange",
        }
    }
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DelayModel {
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform {
            min_ms: 5,
            max_ms: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Halt {
    pub party: Party,
    #[serde(default)]
    pub index: usize,
    pub step: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRule {
    /// Message type name, e.g. `"SAMPLE"`.
    pub message: String,
    pub probability: f64,
}

/// A colluding host feeds the enclave a chain mined at an easier target,
/// carrying a payment that never happened on the real chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FakeChain {
    /// The fake target is the network target shifted left by this many bits.
    #[serde(default = "default_fake_shift")]
    pub easier_shift: u32,
    #[serde(default = "default_fake_length")]
    pub length: u64,
}

fn default_fake_shift() -> u32 {
    8
}
fn default_fake_length() -> u64 {
    10
}

/// Double spend: once the buyer's payment is `confirm_depth - 1` deep, a
/// colluding miner publishes a heavier branch forking below it that spends
/// the same nonce elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Reorg {
    /// Defaults to the block just below the payment.
    #[serde(default)]
    pub fork_height: Option<u64>,
    /// Defaults to one more block than the honest branch above the fork.
    #[serde(default)]
    pub branch_length: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kill {
    pub exchange: usize,
    /// The exchange crashes once the buyer has reached this step.
    pub after_step: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tamper {
    pub exchange: usize,
    /// The host swaps in a modified program before this step; 1 means it
    /// never ran the genuine one.
    #[serde(default = "default_tamper_step")]
    pub from_step: u8,
}

fn default_tamper_step() -> u8 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt: Option<Halt>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drop: Vec<DropRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake_chain: Option<FakeChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reorg: Option<Reorg>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kill_exchange: Vec<Kill>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tamper_enclave: Option<Tamper>,
    /// Sellers that deposit random bytes instead of their data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fake_data: Vec<usize>,
}

impl AdversarySpec {
    pub fn is_benign(&self) -> bool {
        self == &AdversarySpec::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimNetwork {
    #[serde(default = "default_sim_target")]
    pub target_hex: String,
    #[serde(default = "default_confirm_depth")]
    pub confirm_depth: u64,
    #[serde(default = "default_fifo")]
    pub fifo_capacity: usize,
    #[serde(default = "default_timeout")]
    pub trade_timeout_secs: u64,
    #[serde(default = "default_fee")]
    pub service_fee: Amount,
    #[serde(default)]
    pub checkpoint_height: u64,
    #[serde(default = "default_balance")]
    pub buyer_balance: Amount,
}

fn default_sim_target() -> String {
    // 2^248 - 1: about 256 attempts per block, and far enough below the
    // maximum that an 8-bit easier fake target still fits.
    let mut t = [0xffu8; 32];
    t[0] = 0;
    hex::encode(t)
}
fn default_confirm_depth() -> u64 {
    DEFAULT_CONFIRM_DEPTH
}
fn default_fifo() -> usize {
    DEFAULT_FIFO_CAPACITY
}
fn default_timeout() -> u64 {
    DEFAULT_TRADE_TIMEOUT_SECS
}
fn default_fee() -> Amount {
    DEFAULT_SERVICE_FEE
}
fn default_balance() -> Amount {
    10_000
}

impl Default for SimNetwork {
    fn default() -> Self {
        SimNetwork {
            target_hex: default_sim_target(),
            confirm_depth: default_confirm_depth(),
            fifo_capacity: default_fifo(),
            trade_timeout_secs: default_timeout(),
            service_fee: default_fee(),
            checkpoint_height: 0,
            buyer_balance: default_balance(),
        }
    }
}

impl SimNetwork {
    pub fn target(&self) -> Result<Target, SimConfigError> {
        Target::from_hex(&self.target_hex).map_err(|e| SimConfigError::Invalid(format!("target_hex: {e}")))
    }
}

/// Everything that determines a run. Identical configs give identical
/// traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub buyers: usize,
    #[serde(default = "one")]
    pub sellers: usize,
    /// Normal ledger nodes; node 0 mines.
    #[serde(default = "two")]
    pub nodes: usize,
    #[serde(default = "one")]
    pub exchanges: usize,
    /// Exchanges each trade uses; defaults to all of them.
    #[serde(default)]
    pub exchanges_per_trade: Option<usize>,
    #[serde(default)]
    pub network: SimNetwork,
    #[serde(default = "default_price")]
    pub price: Amount,
    #[serde(default = "default_data_size")]
    pub data_size: usize,
    #[serde(default = "default_block_interval")]
    pub block_interval_ms: u64,
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default)]
    pub adversary: AdversarySpec,
    /// Hard stop, in blocks.
    #[serde(default = "default_horizon")]
    pub horizon_blocks: u64,
    /// Mutation hook: exchanges release data without checking payment.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub disable_release_gate: bool,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn default_price() -> Amount {
    100
}
fn default_data_size() -> usize {
    2 * crate::crypto::CHUNK_SIZE + 4096
}
fn default_block_interval() -> u64 {
    10_000
}
fn default_horizon() -> u64 {
    200
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            buyers: 1,
            sellers: 1,
            nodes: 2,
            exchanges: 1,
            exchanges_per_trade: None,
            network: SimNetwork::default(),
            price: default_price(),
            data_size: default_data_size(),
            block_interval_ms: default_block_interval(),
            delay: DelayModel::default(),
            adversary: AdversarySpec::default(),
            horizon_blocks: default_horizon(),
            disable_release_gate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimConfigError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
    #[error("could not parse simulation config: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> SimConfigError {
    SimConfigError::Invalid(msg.into())
}

impl SimConfig {
    pub fn from_json(s: &str) -> Result<Self, SimConfigError> {
        let cfg: SimConfig = serde_json::from_str(s).map_err(|e| SimConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn trade_exchanges(&self) -> usize {
        self.exchanges_per_trade.unwrap_or(self.exchanges)
    }

    pub fn validate(&self) -> Result<(), SimConfigError> {
        if self.buyers == 0 || self.sellers == 0 || self.nodes == 0 || self.exchanges == 0 {
            return Err(invalid("need at least one buyer, seller, node and exchange"));
        }
        let n = self.trade_exchanges();
        if n == 0 || n > self.exchanges || n > MAX_TRADE_EXCHANGES {
            return Err(invalid(format!(
                "exchanges per trade must be 1..={} and at most the exchange count",
                MAX_TRADE_EXCHANGES
            )));
        }
        let target = self.network.target()?;
        if target == Target::MAX {
            return Err(invalid("target must be below the maximum"));
        }
        if self.network.confirm_depth == 0 {
            return Err(invalid("confirm_depth must be at least 1"));
        }
        if self.network.fifo_capacity as u64 <= self.network.confirm_depth {
            return Err(invalid("fifo_capacity must exceed confirm_depth"));
        }
        if self.price == 0 || self.data_size == 0 {
            return Err(invalid("price and data_size must be positive"));
        }
        let needed = self.network.service_fee.saturating_mul(n as u64).saturating_add(self.price);
        if self.network.buyer_balance < needed {
            return Err(invalid("buyer_balance cannot cover fees and price"));
        }
        if self.block_interval_ms < 1000 {
            return Err(invalid("block_interval_ms must be at least 1000"));
        }
        if let DelayModel::Uniform { min_ms, max_ms } = self.delay {
            if min_ms > max_ms {
                return Err(invalid("delay min_ms exceeds max_ms"));
            }
        }
        let max_delay = match self.delay {
            DelayModel::Fixed { ms } => ms,
            DelayModel::Uniform { max_ms, .. } => max_ms,
        };
        if max_delay * 4 >= self.block_interval_ms {
            return Err(invalid("message delays must stay well below the block interval"));
        }
        if self.horizon_blocks == 0 {
            return Err(invalid("horizon_blocks must be positive"));
        }
        let a = &self.adversary;
        if let Some(h) = a.halt {
            if !(1..=LAST_STEP).contains(&h.step) {
                return Err(invalid("halt step must be 1..=15"));
            }
            let count = match h.party {
                Party::Buyer => self.buyers,
                Party::Seller => self.sellers,
                Party::Exchange => self.exchanges,
            };
            if h.index >= count {
                return Err(invalid("halt index out of range"));
            }
        }
        for d in &a.drop {
            if MessageType::from_name(&d.message).is_none() {
                return Err(invalid(format!("unknown message type {:?}", d.message)));
            }
            if !(0.0..=1.0).contains(&d.probability) {
                return Err(invalid("drop probability must be within [0, 1]"));
            }
        }
        if let Some(f) = a.fake_chain {
            if f.easier_shift == 0 || f.easier_shift > 255 || f.length == 0 {
                return Err(invalid("fake chain needs a positive shift and length"));
            }
        }
        if let Some(r) = a.reorg {
            if r.branch_length == Some(0) {
                return Err(invalid("reorg branch_length must be positive"));
            }
        }
        if a.fake_chain.is_some() && a.reorg.is_some() {
            return Err(invalid("fake_chain and reorg both rewrite the buyer's payment"));
        }
        for k in &a.kill_exchange {
            if k.exchange >= self.exchanges || !(1..=LAST_STEP).contains(&k.after_step) {
                return Err(invalid("kill_exchange entry out of range"));
            }
        }
        if let Some(t) = a.tamper_enclave {
            if t.exchange >= self.exchanges || !(1..=LAST_STEP).contains(&t.from_step) {
                return Err(invalid("tamper_enclave entry out of range"));
            }
        }
        if a.fake_data.iter().any(|&s| s >= self.sellers) {
            return Err(invalid("fake_data seller index out of range"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!(SimConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn minimal_json() {
        let c = SimConfig::from_json(r#"{"seed": 7, "adversary": {"halt": {"party": "buyer", "step": 11}}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.adversary.halt.unwrap().step, 11);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"buyers": 0}"#,
            r#"{"adversary": {"halt": {"party": "seller", "step": 16}}}"#,
            r#"{"adversary": {"drop": [{"message": "NOPE", "probability": 0.5}]}}"#,
            r#"{"adversary": {"drop": [{"message": "SAMPLE", "probability": 1.5}]}}"#,
            r#"{"exchanges": 2, "exchanges_per_trade": 3}"#,
            r#"{"delay": {"kind": "uniform", "min_ms": 9, "max_ms": 3}}"#,
            r#"{"network": {"confirm_depth": 0}}"#,
            r#"{"unknown_key": 1}"#,
        ] {
            assert!(SimConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn default_target_leaves_room_for_fake_chain() {
        let t = SimNetwork::default().target().unwrap();
        assert_ne!(t.easier_by_shift(8), Target::MAX);
    }
}

//! Buyer and seller clients: requirements matching, seller selection by
//! on-chain reviews, and the two trading state machines.

mod buyer;
mod seller;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buyer::{BuyerBehavior, BuyerConfig, BuyerSession};
pub use seller::{SellerConfig, SellerSession};

use crate::attestation::Measurement;
use crate::chain::{ChainState, SignedTransaction};
use crate::crypto::{Address, KeyPair};
use crate::net::Message;
use crate::types::{Amount, Endpoint};

/// What a buyer is looking for: every tag must be offered, and the data size
/// must fall within `[min_size, max_size]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSpec {
    pub tags: Vec<String>,
    pub min_size: u64,
    pub max_size: u64,
}

impl DataSpec {
    pub fn matches(&self, offered_tags: &BTreeSet<String>, size: u64) -> bool {
        self.tags.iter().all(|t| offered_tags.contains(t))
            && self.min_size <= size
            && size <= self.max_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandBroadcast {
    pub spec: DataSpec,
    pub price: Amount,
    pub buyer_endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("a demand must offer a positive price")]
pub struct ZeroPrice;

impl DemandBroadcast {
    pub fn new(spec: DataSpec, price: Amount, buyer_endpoint: Endpoint) -> Result<Self, ZeroPrice> {
        if price == 0 {
            return Err(ZeroPrice);
        }
        Ok(DemandBroadcast {
            spec,
            price,
            buyer_endpoint,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SellerReply {
    pub seller: Address,
    pub seller_endpoint: Endpoint,
}

/// A seller's offer: the dataset it holds and the least it will take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Listing {
    pub seller: Address,
    pub endpoint: Endpoint,
    pub tags: BTreeSet<String>,
    pub size: u64,
    pub min_price: Amount,
}

impl Listing {
    pub fn respond(&self, demand: &DemandBroadcast) -> Option<SellerReply> {
        (demand.spec.matches(&self.tags, self.size) && self.min_price <= demand.price).then(|| {
            SellerReply {
                seller: self.seller,
                seller_endpoint: self.endpoint.clone(),
            }
        })
    }
}

/// Replies from every seller whose listing matches the demand.
pub fn broadcast_demand(demand: &DemandBroadcast, sellers: &[Listing]) -> BTreeSet<SellerReply> {
    sellers.iter().filter_map(|s| s.respond(demand)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no seller replied")]
pub struct NoCandidate;

/// Highest mean on-chain rating wins; unreviewed sellers count as 0 and ties
/// go to the smallest address.
pub fn select_seller(replies: &[SellerReply], chain: &ChainState) -> Result<SellerReply, NoCandidate> {
    let mut best: Option<(&SellerReply, f64)> = None;
    for r in replies {
        let rating = chain.mean_rating(&r.seller);
        best = match best {
            None => Some((r, rating)),
            Some((b, br)) if rating > br || (rating == br && r.seller < b.seller) => Some((r, rating)),
            keep => keep,
        };
    }
    best.map(|(r, _)| r.clone()).ok_or(NoCandidate)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReviewError {
    #[error("rating must be between 1 and 5")]
    InvalidRating,
    #[error("no confirmed payment from the author to the subject")]
    Unauthorized,
}

/// Builds a review transaction, refusing ones the chain would reject.
pub fn post_review(
    chain: &ChainState,
    author: &KeyPair,
    subject: Address,
    rating: u8,
    comment: &[u8],
) -> Result<SignedTransaction, ReviewError> {
    if !(1..=5).contains(&rating) {
        return Err(ReviewError::InvalidRating);
    }
    if !chain.ledger().has_paid(&author.address(), &subject) {
        return Err(ReviewError::Unauthorized);
    }
    Ok(SignedTransaction::review(author, subject, rating, comment))
}

/// An exchange as published in the network config, plus the measurement its
/// enclave must report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeInfo {
    pub id: String,
    pub owner: Address,
    pub endpoint: Endpoint,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Buyer,
    Seller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    InProgress,
    Completed,
    AbortedAtStep(u8),
    /// Paid, received the full data, and it did not match the spec.
    Defrauded,
    /// Matching found no seller willing to trade.
    NoMatch,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::InProgress
    }
}

/// Side effects requested by a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { to: Endpoint, msg: Message },
    /// Calls back `on_timer(token)` after `after_ms` of simulated time.
    Timer { after_ms: u64, token: u64 },
}

/// Checks applied to decrypted data: the sample at step 10 and the whole
/// file at step 14.
pub trait DataVerifier: Send + Sync {
    fn sample_ok(&self, sample: &[u8]) -> bool;
    fn full_ok(&self, data: &[u8]) -> bool;
}

/// Accepts exactly the expected file.
#[derive(Debug, Clone)]
pub struct ExpectedFile(pub std::sync::Arc<Vec<u8>>);

impl DataVerifier for ExpectedFile {
    fn sample_ok(&self, sample: &[u8]) -> bool {
        !sample.is_empty() && self.0.starts_with(sample)
    }

    fn full_ok(&self, data: &[u8]) -> bool {
        data == self.0.as_slice()
    }
}

/// Monotone record of the steps a session went through.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StepLog {
    pub entries: Vec<(u8, u64)>,
}

impl StepLog {
    pub fn push(&mut self, step: u8, now: u64) {
        self.entries.push((step, now));
    }

    pub fn steps(&self) -> Vec<u8> {
        self.entries.iter().map(|(s, _)| *s).collect()
    }

    pub fn last(&self) -> Option<u8> {
        self.entries.last().map(|(s, _)| *s)
    }

    pub fn time_of(&self, step: u8) -> Option<u64> {
        self.entries.iter().find(|(s, _)| *s == step).map(|(_, t)| *t)
    }

    pub fn strictly_increasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].0 < w[1].0)
    }
}

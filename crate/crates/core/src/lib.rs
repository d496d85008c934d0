//! Fair data trading over a proof-of-work ledger.
//!
//! A buyer pays a seller on chain; a trusted exchange running inside a
//! (simulated) enclave holds the seller's encrypted data and releases it only
//! once it has verified SPV evidence of that payment against its own window
//! of validated block headers.

pub mod chain;
pub mod crypto;
pub mod merkle;
pub mod types;
pub mod wire;
pub mod attestation;
pub mod exchange;
pub mod spv;
pub mod clients;
pub mod net;
pub mod sim;

//! Deterministic discrete-event simulation of ledger nodes, exchanges,
//! buyers and sellers, with adversarial controls and a fairness audit.
//!
//! Every message crosses the simulated network as an encoded frame and is
//! decoded on delivery. All randomness comes from generators seeded by the
//! config, so a config fully determines the trace.

mod audit;
mod config;
mod queue;
mod trace;
mod world;

pub use audit::{Violation, ViolationKind};
pub use config::{
    AdversarySpec, DelayModel, DropRule, FakeChain, Halt, Kill, Party, Reorg, SimConfig,
    SimConfigError, SimNetwork, Tamper, LAST_STEP, MAX_TRADE_EXCHANGES,
};
pub use queue::EventQueue;
pub use trace::{Trace, TraceRecord};
pub use world::{
    dataset, derive_seed, run_simulation, BuyerReport, ExchangeReport, ExchangeStep,
    FakeChainReport, NetStats, ReorgReport, SellerReport, SimOutput, SimReport, Termination,
    BLOCK_CAPACITY,
};

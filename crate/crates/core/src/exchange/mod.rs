//! The trusted exchange: a sealed trading program fed block headers by its
//! untrusted host.

mod enclave;
mod header_store;

pub use enclave::{
    DepositOutcome, EgressChannel, EgressRecord, Enclave, EnclaveConfig, EvidenceFault, GcReport,
    OpenTradeError, PaymentOutcome, ReleaseGate, TradeOpened, TradeParams, TradeState,
    GC_EVERY_HEADERS,
};
pub use header_store::{HeaderStore, IngestOutcome};

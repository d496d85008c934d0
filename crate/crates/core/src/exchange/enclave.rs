use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::header_store::{HeaderStore, IngestOutcome};
use crate::attestation::{generate_report, AttestationReport, EnclaveIdentity, RootOfTrust};
use crate::chain::{BlockHeader, NetworkConfig, Target};
use crate::crypto::{Address, CipherChunk, Hash256, KeyPair, PublicKey, CHUNK_SIZE};
use crate::spv::{verify_evidence, EvidenceStatus, HeaderView, PaymentEvidence};
use crate::types::{Amount, Endpoint, TradeId};

/// Automatic GC runs after every this many accepted headers.
pub const GC_EVERY_HEADERS: u64 = 10;

/// Parameters fixed when the enclave is launched. All of them are covered by
/// its measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveConfig {
    pub program_version: String,
    pub checkpoint_height: u64,
    pub checkpoint_hash: Hash256,
    pub network_config_hash: Hash256,
    pub target: Target,
    pub confirm_depth: u64,
    pub fifo_capacity: usize,
    pub trade_timeout_secs: u64,
    pub service_fee: Amount,
    pub exchange_owner: Address,
}

impl EnclaveConfig {
    pub fn from_network(net: &NetworkConfig, checkpoint_hash: Hash256, exchange_owner: Address) -> Self {
        EnclaveConfig {
            program_version: net.program_version.clone(),
            checkpoint_height: net.checkpoint_height,
            checkpoint_hash,
            network_config_hash: net.digest(),
            target: net.target,
            confirm_depth: net.confirm_depth,
            fifo_capacity: net.fifo_capacity,
            trade_timeout_secs: net.trade_timeout_secs,
            service_fee: net.service_fee,
            exchange_owner,
        }
    }

    pub fn identity(&self) -> EnclaveIdentity {
        EnclaveIdentity {
            program_version: self.program_version.clone(),
            checkpoint_hash: self.checkpoint_hash,
            network_config_hash: self.network_config_hash,
            confirm_depth: self.confirm_depth,
            fifo_capacity: self.fifo_capacity as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TradeState {
    Opened,
    DataDeposited,
    Released,
    Expired,
}

impl TradeState {
    pub fn to_byte(self) -> u8 {
        match self {
            TradeState::Opened => 0,
            TradeState::DataDeposited => 1,
            TradeState::Released => 2,
            TradeState::Expired => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => TradeState::Opened,
            1 => TradeState::DataDeposited,
            2 => TradeState::Released,
            3 => TradeState::Expired,
            _ => return None,
        })
    }

    /// Declared transitions: Opened -> DataDeposited -> Released, and any
    /// non-terminal state -> Expired.
    pub fn can_transition(self, to: TradeState) -> bool {
        use TradeState::*;
        matches!(
            (self, to),
            (Opened, DataDeposited) | (DataDeposited, Released) | (Opened, Expired) | (DataDeposited, Expired) | (Released, Expired)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingTradeEntry {
    id: TradeId,
    price: Amount,
    buyer: Address,
    seller: Address,
    buyer_endpoint: Endpoint,
    deposit_timestamp: u64,
    state: TradeState,
    ciphertext: Option<Vec<CipherChunk>>,
}

impl PendingTradeEntry {
    fn set_state(&mut self, to: TradeState, log: &mut Vec<(TradeId, TradeState, TradeState)>) {
        debug_assert!(self.state.can_transition(to), "{:?} -> {:?}", self.state, to);
        log.push((self.id, self.state, to));
        self.state = to;
    }
}

/// What the enclave echoes back for counterparty verification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeParams {
    pub id: TradeId,
    pub price: Amount,
    pub buyer: Address,
    pub seller: Address,
}

/// Why a piece of evidence did not satisfy the enclave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
pub enum EvidenceFault {
    #[error("SPV check failed: {0:?}")]
    Spv(EvidenceStatus),
    #[error("payment not addressed to this exchange")]
    WrongRecipient,
    #[error("payment not made by the stated buyer")]
    WrongPayer,
    #[error("payment already consumed by another trade")]
    AlreadyUsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpenTradeError {
    #[error("invalid service evidence: {0}")]
    InvalidEvidence(EvidenceFault),
    #[error("service fee {paid} below required {required}")]
    FeeTooLow { paid: Amount, required: Amount },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeOpened {
    pub id: TradeId,
    pub notify: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepositOutcome {
    /// Ciphertext stored; chunk 0 goes to the buyer.
    SampleSent { to: Endpoint, sample: CipherChunk },
    UnknownId,
    WrongState(TradeState),
    /// Empty, oversized, or out-of-order chunk list.
    MalformedChunks,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaymentOutcome {
    DataReleased { to: Endpoint, chunks: Vec<CipherChunk> },
    EvidenceRejected(EvidenceFault),
    MismatchedTerms,
    UnknownId,
    WrongState(TradeState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EgressChannel {
    Sample,
    Release,
}

/// One ciphertext chunk leaving the enclave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgressRecord {
    pub trade_id: TradeId,
    pub chunk_index: u32,
    pub channel: EgressChannel,
    pub to: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GcReport {
    pub removed: Vec<(TradeId, TradeState)>,
}

impl GcReport {
    pub fn removed_count(&self) -> usize {
        self.removed.len()
    }
}

/// Whether payment evidence actually gates release. Only a tampered
/// program or a mutation test turns it off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseGate {
    Enforced,
    Disabled,
}

/// The trusted trading program.
///
/// Host code reaches the program only through the methods below; the trade
/// table and stored ciphertext are private. Every chunk that leaves is
/// recorded in the egress log, which auditors use to confirm that only
/// chunk 0 ever leaves before a verified payment.
pub struct Enclave {
    config: EnclaveConfig,
    store: HeaderStore,
    table: BTreeMap<TradeId, PendingTradeEntry>,
    consumed_payments: HashSet<Hash256>,
    rng: ChaCha20Rng,
    key: KeyPair,
    root: Arc<dyn RootOfTrust + Send + Sync>,
    gate: ReleaseGate,
    accepted_headers: u64,
    egress: Vec<EgressRecord>,
    transitions: Vec<(TradeId, TradeState, TradeState)>,
    pending_gc: Vec<GcReport>,
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("program_version", &self.config.program_version)
            .field("live_trades", &self.table.len())
            .finish_non_exhaustive()
    }
}

impl Enclave {
    /// Launches the program. `seed` feeds the in-enclave RNG that produces
    /// the enclave key and trade ids.
    pub fn launch(
        config: EnclaveConfig,
        root: Arc<dyn RootOfTrust + Send + Sync>,
        seed: [u8; 32],
    ) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let key = KeyPair::generate(&mut rng);
        let store = HeaderStore::new(
            config.checkpoint_height,
            config.checkpoint_hash,
            config.target,
            config.fifo_capacity,
        );
        Enclave {
            config,
            store,
            table: BTreeMap::new(),
            consumed_payments: HashSet::new(),
            rng,
            key,
            root,
            gate: ReleaseGate::Enforced,
            accepted_headers: 0,
            egress: Vec::new(),
            transitions: Vec::new(),
            pending_gc: Vec::new(),
        }
    }

    #[doc(hidden)]
    pub fn set_release_gate(&mut self, gate: ReleaseGate) {
        self.gate = gate;
    }

    pub fn config(&self) -> &EnclaveConfig {
        &self.config
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn attest(&self, challenge: [u8; 32]) -> AttestationReport {
        generate_report(
            self.root.as_ref(),
            &self.config.identity(),
            self.key.public_key(),
            challenge,
        )
    }

    pub fn headers(&self) -> &HeaderStore {
        &self.store
    }

    /// Trusted clock: timestamp of the best validated header.
    pub fn now(&self) -> u64 {
        self.store.best_timestamp().unwrap_or(0)
    }

    pub fn ingest_header(&mut self, header: &BlockHeader) -> IngestOutcome {
        let known = self.store.contains(&header.hash());
        let outcome = self.store.ingest(header);
        if outcome == IngestOutcome::Accepted && !known {
            self.accepted_headers += 1;
            if self.accepted_headers.is_multiple_of(GC_EVERY_HEADERS) {
                let now = self.now();
                let report = self.gc(now);
                if !report.removed.is_empty() {
                    self.pending_gc.push(report);
                }
            }
        }
        outcome
    }

    /// GC sweeps triggered by header ingestion since the last call.
    pub fn drain_gc_reports(&mut self) -> Vec<GcReport> {
        std::mem::take(&mut self.pending_gc)
    }

    fn check_service_evidence(&self, ev: &PaymentEvidence, buyer: &Address) -> Result<(), OpenTradeError> {
        let status = verify_evidence(ev, &self.store, self.config.confirm_depth);
        if status != EvidenceStatus::Valid {
            return Err(OpenTradeError::InvalidEvidence(EvidenceFault::Spv(status)));
        }
        if ev.tx.to != self.config.exchange_owner {
            return Err(OpenTradeError::InvalidEvidence(EvidenceFault::WrongRecipient));
        }
        if &ev.tx.from != buyer {
            return Err(OpenTradeError::InvalidEvidence(EvidenceFault::WrongPayer));
        }
        if ev.tx.amount < self.config.service_fee {
            return Err(OpenTradeError::FeeTooLow {
                paid: ev.tx.amount,
                required: self.config.service_fee,
            });
        }
        if self.consumed_payments.contains(&ev.tx.tx_hash()) {
            return Err(OpenTradeError::InvalidEvidence(EvidenceFault::AlreadyUsed));
        }
        Ok(())
    }

    pub fn open_trade(
        &mut self,
        service_evidence: &PaymentEvidence,
        price: Amount,
        buyer: Address,
        seller: Address,
        buyer_endpoint: Endpoint,
    ) -> Result<TradeOpened, OpenTradeError> {
        self.check_service_evidence(service_evidence, &buyer)?;
        let deposit_timestamp = self
            .store
            .best_header_at(service_evidence.block_height)
            .map(|(_, h)| h.timestamp)
            .expect("valid evidence refers to a stored header");
        self.consumed_payments.insert(service_evidence.tx.tx_hash());
        let id = loop {
            let candidate = TradeId::random(&mut self.rng);
            if !self.table.contains_key(&candidate) {
                break candidate;
            }
        };
        self.table.insert(
            id,
            PendingTradeEntry {
                id,
                price,
                buyer,
                seller,
                buyer_endpoint: buyer_endpoint.clone(),
                deposit_timestamp,
                state: TradeState::Opened,
                ciphertext: None,
            },
        );
        Ok(TradeOpened {
            id,
            notify: buyer_endpoint,
        })
    }

    pub fn get_trade_params(&self, id: &TradeId) -> Option<TradeParams> {
        self.table.get(id).map(|e| TradeParams {
            id: e.id,
            price: e.price,
            buyer: e.buyer,
            seller: e.seller,
        })
    }

    fn is_stale(&self, entry: &PendingTradeEntry) -> bool {
        self.now().saturating_sub(entry.deposit_timestamp) > self.config.trade_timeout_secs
    }

    /// Marks a timed-out entry Expired; returns its state afterwards.
    fn refresh_expiry(&mut self, id: &TradeId) -> Option<TradeState> {
        let stale = self.table.get(id).map(|e| self.is_stale(e))?;
        let entry = self.table.get_mut(id)?;
        if stale && entry.state != TradeState::Expired && entry.state != TradeState::Released {
            entry.set_state(TradeState::Expired, &mut self.transitions);
            entry.ciphertext = None;
        }
        Some(entry.state)
    }

    pub fn deposit_data(&mut self, id: &TradeId, chunks: Vec<CipherChunk>) -> DepositOutcome {
        let Some(state) = self.refresh_expiry(id) else {
            return DepositOutcome::UnknownId;
        };
        if state != TradeState::Opened {
            return DepositOutcome::WrongState(state);
        }
        let total = chunks.len();
        let well_formed = total > 0
            && chunks.iter().enumerate().all(|(i, c)| {
                c.index as usize == i && c.total as usize == total && c.body.len() <= CHUNK_SIZE
            });
        if !well_formed {
            return DepositOutcome::MalformedChunks;
        }
        let entry = self.table.get_mut(id).expect("checked above");
        let to = entry.buyer_endpoint.clone();
        let sample = chunks[0].clone();
        entry.ciphertext = Some(chunks);
        entry.set_state(TradeState::DataDeposited, &mut self.transitions);
        self.egress.push(EgressRecord {
            trade_id: *id,
            chunk_index: sample.index,
            channel: EgressChannel::Sample,
            to: to.clone(),
        });
        DepositOutcome::SampleSent { to, sample }
    }

    pub fn submit_payment_evidence(&mut self, id: &TradeId, ev: &PaymentEvidence) -> PaymentOutcome {
        let Some(state) = self.refresh_expiry(id) else {
            return PaymentOutcome::UnknownId;
        };
        if state != TradeState::DataDeposited {
            return PaymentOutcome::WrongState(state);
        }
        if self.gate == ReleaseGate::Enforced {
            let status = verify_evidence(ev, &self.store, self.config.confirm_depth);
            if status != EvidenceStatus::Valid {
                return PaymentOutcome::EvidenceRejected(EvidenceFault::Spv(status));
            }
            let entry = &self.table[id];
            if ev.tx.from != entry.buyer || ev.tx.to != entry.seller || ev.tx.amount < entry.price {
                return PaymentOutcome::MismatchedTerms;
            }
            if self.consumed_payments.contains(&ev.tx.tx_hash()) {
                return PaymentOutcome::EvidenceRejected(EvidenceFault::AlreadyUsed);
            }
            self.consumed_payments.insert(ev.tx.tx_hash());
        }
        let entry = self.table.get_mut(id).expect("checked above");
        entry.set_state(TradeState::Released, &mut self.transitions);
        let chunks = entry.ciphertext.clone().expect("deposited entries hold ciphertext");
        let to = entry.buyer_endpoint.clone();
        for c in &chunks {
            self.egress.push(EgressRecord {
                trade_id: *id,
                chunk_index: c.index,
                channel: EgressChannel::Release,
                to: to.clone(),
            });
        }
        PaymentOutcome::DataReleased { to, chunks }
    }

    /// Removes released entries and entries older than the timeout,
    /// erasing their ciphertext.
    pub fn gc(&mut self, now: u64) -> GcReport {
        let timeout = self.config.trade_timeout_secs;
        let doomed: Vec<TradeId> = self
            .table
            .values()
            .filter(|e| {
                e.state == TradeState::Released
                    || e.state == TradeState::Expired
                    || now.saturating_sub(e.deposit_timestamp) > timeout
            })
            .map(|e| e.id)
            .collect();
        let mut report = GcReport::default();
        for id in doomed {
            let mut entry = self.table.remove(&id).expect("listed above");
            let prior = entry.state;
            if prior != TradeState::Released && prior != TradeState::Expired {
                entry.set_state(TradeState::Expired, &mut self.transitions);
            }
            entry.ciphertext = None;
            report.removed.push((id, prior));
        }
        report
    }

    // Audit instrumentation. Read-only views used by tests and the
    // simulator's fairness checks; none of them expose trade secrets.

    pub fn egress_log(&self) -> &[EgressRecord] {
        &self.egress
    }

    pub fn transition_log(&self) -> &[(TradeId, TradeState, TradeState)] {
        &self.transitions
    }

    /// Ciphertext chunks currently held.
    pub fn retained_chunks(&self) -> usize {
        self.table
            .values()
            .map(|e| e.ciphertext.as_ref().map_or(0, Vec::len))
            .sum()
    }

    pub fn live_trades(&self) -> usize {
        self.table.len()
    }

    pub fn trade_state(&self, id: &TradeId) -> Option<TradeState> {
        self.table.get(id).map(|e| e.state)
    }

    pub fn trade_counts(&self) -> BTreeMap<TradeState, usize> {
        let mut m = BTreeMap::new();
        for e in self.table.values() {
            *m.entry(e.state).or_insert(0) += 1;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::{verify_report, SoftwareRoot};
    use crate::chain::{mine_block, Allocation, ChainState, SignedTransaction};
    use crate::crypto::{decrypt_chunk, decrypt_chunked, encrypt_chunked, DataKey};
    use crate::spv::build_evidence;

    struct World {
        chain: ChainState,
        buyer: KeyPair,
        seller: KeyPair,
        owner: KeyPair,
        enclave: Enclave,
        fed: u64,
    }

    const PRICE: Amount = 100;

    fn world_with(timeout: u64) -> World {
        let buyer = KeyPair::from_seed([1; 32]);
        let seller = KeyPair::from_seed([2; 32]);
        let owner = KeyPair::from_seed([3; 32]);
        let mut net = NetworkConfig::new(
            Target::pow2(252),
            vec![Allocation {
                address: buyer.address(),
                amount: 10_000,
            }],
        );
        net.trade_timeout_secs = timeout;
        let chain = ChainState::new(net.clone());
        let cfg = EnclaveConfig::from_network(&net, chain.genesis_hash(), owner.address());
        let root = Arc::new(SoftwareRoot::new(KeyPair::from_seed([9; 32])));
        World {
            chain,
            buyer,
            seller,
            owner,
            enclave: Enclave::launch(cfg, root, [5; 32]),
            fed: 0,
        }
    }

    fn world() -> World {
        world_with(600)
    }

    impl World {
        fn mine(&mut self, txs: Vec<SignedTransaction>) {
            let t = self.chain.tip_header().clone();
            let b = mine_block(&t, txs, self.chain.config().target, t.timestamp + 10).unwrap();
            self.chain.validate_and_apply(b).unwrap();
            self.feed();
        }

        fn feed(&mut self) {
            while self.fed < self.chain.height() {
                self.fed += 1;
                let h = self.chain.canonical_block_at(self.fed).unwrap().header.clone();
                assert_eq!(self.enclave.ingest_header(&h), IngestOutcome::Accepted);
            }
        }

        fn pay(&mut self, to: Address, amount: Amount) -> PaymentEvidence {
            let nonce = self.chain.next_nonce(&self.buyer.address());
            let tx = SignedTransaction::payment(&self.buyer, to, amount, nonce);
            let h = tx.tx.tx_hash();
            self.mine(vec![tx]);
            build_evidence(&self.chain, &h).unwrap()
        }

        fn bury(&mut self, n: usize) {
            for _ in 0..n {
                self.mine(vec![]);
            }
        }

        fn open(&mut self) -> TradeId {
            let fee = self.enclave.config().service_fee;
            let ev = self.pay(self.owner.address(), fee);
            self.bury(6);
            self.enclave
                .open_trade(&ev, PRICE, self.buyer.address(), self.seller.address(), ep("10.0.0.1:7000"))
                .unwrap()
                .id
        }
    }

    fn ep(s: &str) -> Endpoint {
        Endpoint::new(s).unwrap()
    }

    fn file(len: usize) -> Vec<u8> {
        (0..len).map(|i| (i * 7 % 251) as u8).collect()
    }

    #[test]
    fn open_trade_needs_depth_k() {
        let mut w = world();
        let ev = w.pay(w.owner.address(), 10);
        w.bury(5);
        let r = w.enclave.open_trade(&ev, PRICE, w.buyer.address(), w.seller.address(), ep("b"));
        assert_eq!(
            r,
            Err(OpenTradeError::InvalidEvidence(EvidenceFault::Spv(
                EvidenceStatus::InsufficientConfirmations
            )))
        );
        w.bury(1);
        let opened = w
            .enclave
            .open_trade(&ev, PRICE, w.buyer.address(), w.seller.address(), ep("b"))
            .unwrap();
        assert_eq!(opened.id.to_hex().len(), 32);
        assert_eq!(opened.notify, ep("b"));
        assert_eq!(
            w.enclave.get_trade_params(&opened.id),
            Some(TradeParams {
                id: opened.id,
                price: PRICE,
                buyer: w.buyer.address(),
                seller: w.seller.address(),
            })
        );
    }

    #[test]
    fn open_trade_rejections() {
        let mut w = world();
        let elsewhere = w.pay(w.seller.address(), 10);
        let cheap = w.pay(w.owner.address(), 9);
        let good = w.pay(w.owner.address(), 10);
        w.bury(6);
        let (b, s) = (w.buyer.address(), w.seller.address());
        assert_eq!(
            w.enclave.open_trade(&elsewhere, PRICE, b, s, ep("b")),
            Err(OpenTradeError::InvalidEvidence(EvidenceFault::WrongRecipient))
        );
        assert_eq!(
            w.enclave.open_trade(&cheap, PRICE, b, s, ep("b")),
            Err(OpenTradeError::FeeTooLow { paid: 9, required: 10 })
        );
        assert_eq!(
            w.enclave.open_trade(&good, PRICE, s, b, ep("b")),
            Err(OpenTradeError::InvalidEvidence(EvidenceFault::WrongPayer))
        );
        w.enclave.open_trade(&good, PRICE, b, s, ep("b")).unwrap();
        assert_eq!(
            w.enclave.open_trade(&good, PRICE, b, s, ep("b")),
            Err(OpenTradeError::InvalidEvidence(EvidenceFault::AlreadyUsed))
        );
    }

    #[test]
    fn unknown_id() {
        let w = world();
        assert_eq!(w.enclave.get_trade_params(&TradeId([7; 16])), None);
    }

    #[test]
    fn sample_is_chunk_zero_and_release_needs_payment() {
        let mut w = world();
        let id = w.open();
        let key = DataKey([4; 32]);
        let data = file(3 * CHUNK_SIZE - 10);
        let chunks = encrypt_chunked(&key, &data, &id).unwrap();
        let DepositOutcome::SampleSent { to, sample } = w.enclave.deposit_data(&id, chunks.clone()) else {
            panic!("deposit refused");
        };
        assert_eq!(to, ep("10.0.0.1:7000"));
        assert_eq!(sample.index, 0);
        assert_eq!(decrypt_chunk(&key, &sample, &id).unwrap(), data[..CHUNK_SIZE]);
        assert_eq!(w.enclave.retained_chunks(), 3);
        assert_eq!(
            w.enclave.deposit_data(&id, chunks),
            DepositOutcome::WrongState(TradeState::DataDeposited)
        );

        let short = w.pay(w.seller.address(), PRICE - 1);
        w.bury(6);
        assert_eq!(w.enclave.submit_payment_evidence(&id, &short), PaymentOutcome::MismatchedTerms);

        let pay = w.pay(w.seller.address(), PRICE);
        assert_eq!(
            w.enclave.submit_payment_evidence(&id, &pay),
            PaymentOutcome::EvidenceRejected(EvidenceFault::Spv(EvidenceStatus::InsufficientConfirmations))
        );
        w.bury(6);
        let PaymentOutcome::DataReleased { to, chunks } = w.enclave.submit_payment_evidence(&id, &pay) else {
            panic!("release refused");
        };
        assert_eq!(to, ep("10.0.0.1:7000"));
        assert_eq!(decrypt_chunked(&key, &chunks, &id).unwrap(), data);
        assert_eq!(
            w.enclave.submit_payment_evidence(&id, &pay),
            PaymentOutcome::WrongState(TradeState::Released)
        );

        let sample_exits = w
            .enclave
            .egress_log()
            .iter()
            .filter(|e| e.channel == EgressChannel::Sample)
            .count();
        assert_eq!(sample_exits, 1);
        assert!(w
            .enclave
            .egress_log()
            .iter()
            .all(|e| e.channel == EgressChannel::Release || e.chunk_index == 0));

        let report = w.enclave.gc(w.enclave.now());
        assert_eq!(report.removed_count(), 1);
        assert_eq!(w.enclave.retained_chunks(), 0);
        assert_eq!(w.enclave.get_trade_params(&id), None);
    }

    #[test]
    fn fee_evidence_cannot_buy_data() {
        let mut w = world();
        let fee_ev = w.pay(w.owner.address(), 10);
        w.bury(6);
        let id = w
            .enclave
            .open_trade(&fee_ev, PRICE, w.buyer.address(), w.seller.address(), ep("b"))
            .unwrap()
            .id;
        let chunks = encrypt_chunked(&DataKey([1; 32]), &file(10), &id).unwrap();
        w.enclave.deposit_data(&id, chunks);
        assert_eq!(w.enclave.submit_payment_evidence(&id, &fee_ev), PaymentOutcome::MismatchedTerms);
    }

    #[test]
    fn malformed_deposits_rejected() {
        let mut w = world();
        let id = w.open();
        assert_eq!(w.enclave.deposit_data(&id, vec![]), DepositOutcome::MalformedChunks);
        let mut chunks = encrypt_chunked(&DataKey([1; 32]), &file(2 * CHUNK_SIZE), &id).unwrap();
        chunks.swap(0, 1);
        assert_eq!(w.enclave.deposit_data(&id, chunks), DepositOutcome::MalformedChunks);
        assert_eq!(w.enclave.deposit_data(&TradeId([0; 16]), vec![]), DepositOutcome::UnknownId);
    }

    #[test]
    fn gc_expires_stale_entries() {
        let mut w = world_with(100);
        assert_eq!(w.enclave.gc(0).removed_count(), 0);
        let id = w.open();
        assert_eq!(w.enclave.gc(w.enclave.now()).removed_count(), 0);
        // 6 confirmations already took 60 s; 5 more blocks push past 100 s.
        w.bury(5);
        assert_eq!(
            w.enclave.deposit_data(&id, encrypt_chunked(&DataKey([1; 32]), b"x", &id).unwrap()),
            DepositOutcome::WrongState(TradeState::Expired)
        );
        let report = w.enclave.gc(w.enclave.now());
        assert_eq!(report.removed, vec![(id, TradeState::Expired)]);
        assert_eq!(w.enclave.get_trade_params(&id), None);
    }

    #[test]
    fn automatic_gc_on_header_ingest() {
        let mut w = world_with(30);
        let id = w.open();
        w.bury(20);
        let drained: Vec<_> = w.enclave.drain_gc_reports().into_iter().flat_map(|r| r.removed).collect();
        assert_eq!(drained.len(), 1);
        assert_eq!(drained[0].0, id);
        assert_eq!(w.enclave.live_trades(), 0);
    }

    #[test]
    fn transitions_stay_declared() {
        let mut w = world();
        let id = w.open();
        let chunks = encrypt_chunked(&DataKey([1; 32]), &file(10), &id).unwrap();
        w.enclave.deposit_data(&id, chunks);
        let pay = w.pay(w.seller.address(), PRICE);
        w.bury(6);
        w.enclave.submit_payment_evidence(&id, &pay);
        for (_, from, to) in w.enclave.transition_log() {
            assert!(from.can_transition(*to));
        }
        assert_eq!(w.enclave.transition_log().len(), 2);
    }

    #[test]
    fn disabled_gate_releases_without_payment() {
        let mut w = world();
        let id = w.open();
        w.enclave.set_release_gate(ReleaseGate::Disabled);
        let chunks = encrypt_chunked(&DataKey([1; 32]), &file(10), &id).unwrap();
        w.enclave.deposit_data(&id, chunks);
        let bogus = w.pay(w.owner.address(), 10);
        assert!(matches!(
            w.enclave.submit_payment_evidence(&id, &bogus),
            PaymentOutcome::DataReleased { .. }
        ));
    }

    #[test]
    fn attestation_binds_config() {
        let w = world();
        let report = w.enclave.attest([8; 32]);
        let root_pk = KeyPair::from_seed([9; 32]).public_key();
        let expected = w.enclave.config().identity().measurement();
        assert!(verify_report(&report, &expected, &root_pk, &[8; 32]));
        assert_eq!(report.enclave_pubkey, w.enclave.public_key());
    }

    #[test]
    fn trade_ids_unique() {
        let mut w = world();
        let mut seen = HashSet::new();
        for _ in 0..20 {
            assert!(seen.insert(w.open()));
        }
    }
}

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use memchr::memmem;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::audit::{self, Violation};
use super::config::{DelayModel, Party, SimConfig, SimConfigError};
use super::queue::EventQueue;
use super::trace::Trace;
use crate::attestation::{RootOfTrust, SoftwareRoot};
use crate::chain::{
    mine_block, Allocation, ApplyOutcome, Block, ChainState, NetworkConfig,
    SignedTransaction, Target, Transaction,
};
use crate::clients::{
    Action, BuyerBehavior, BuyerConfig, BuyerSession, DataSpec, ExchangeInfo, ExpectedFile,
    Listing, Outcome, SellerConfig, SellerSession,
};
use crate::crypto::{hash, Address, Hash256, KeyPair};
use crate::exchange::{
    DepositOutcome, EgressRecord, Enclave, EnclaveConfig, EvidenceFault, IngestOutcome, OpenTradeError,
    PaymentOutcome, ReleaseGate, TradeState,
};
use crate::merkle;
use crate::net::{Message, MessageType, RejectCode};
use crate::spv::PaymentEvidence;
use crate::types::{Amount, Endpoint, TradeId};

/// Transactions per block the miner includes at most.
pub const BLOCK_CAPACITY: usize = 500;

/// Bytes of seller data checked for in every frame.
const WINDOW: usize = 32;
const WINDOW_STRIDE: usize = 8 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(super) enum ActorId {
    Node(usize),
    Exchange(usize),
    Buyer(usize),
    Seller(usize),
    Attacker,
}

enum Event {
    Start(usize),
    Mine,
    Deliver {
        from: Endpoint,
        to: Endpoint,
        frame: Vec<u8>,
    },
    Timer {
        actor: ActorId,
        token: u64,
    },
}

pub(super) struct Node {
    pub endpoint: Endpoint,
    pub chain: ChainState,
    mempool: Vec<SignedTransaction>,
    seen: HashSet<Hash256>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeStep {
    pub step: u8,
    pub peer: Endpoint,
    pub time: u64,
}

pub(super) struct ExchangeHost {
    pub id: String,
    pub endpoint: Endpoint,
    pub owner: KeyPair,
    pub chain: ChainState,
    pub enclave: Enclave,
    pub honest_config: EnclaveConfig,
    pub alive: bool,
    pub tampered_at: Option<u64>,
    pub halt_at: Option<u8>,
    pub steps: Vec<ExchangeStep>,
    pub gc_removed: usize,
    pub header_rejects: usize,
    /// Trade ids opened here, with the buyer they belong to.
    pub trades: BTreeMap<TradeId, Endpoint>,
    pub seed: [u8; 32],
    /// Logs of an enclave the host replaced.
    pub retired_egress: Vec<EgressRecord>,
    pub retired_transitions: Vec<(TradeId, TradeState, TradeState)>,
}

pub(super) struct BuyerActor {
    pub session: BuyerSession,
    pub chain: ChainState,
    pub key: KeyPair,
    traced_steps: usize,
    traced_outcome: Outcome,
}

pub(super) struct SellerActor {
    pub session: SellerSession,
    traced_steps: usize,
    traced_outcome: Outcome,
}

/// A chunk-bearing frame that left an exchange.
#[derive(Debug, Clone)]
pub(super) struct ChunkFrame {
    pub exchange: usize,
    pub kind: MessageType,
    pub trade_id: TradeId,
    pub indices: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(super) struct ReleaseRecord {
    pub exchange: usize,
    pub trade_id: TradeId,
    pub buyer: Endpoint,
}

#[derive(Debug, Clone)]
pub(super) struct DepositRecord {
    pub seller: Endpoint,
    pub exchange: usize,
    pub time: u64,
}

#[derive(Debug, Clone)]
pub(super) struct LeakRecord {
    pub from: Endpoint,
    pub to: Endpoint,
    pub kind: MessageType,
}

/// What the run collected for the auditors.
#[derive(Debug, Default)]
pub(super) struct AuditLog {
    pub chunk_frames: Vec<ChunkFrame>,
    pub releases: Vec<ReleaseRecord>,
    pub deposits: Vec<DepositRecord>,
    pub leaks: Vec<LeakRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FakeChainReport {
    pub fake_target: Target,
    pub headers: u64,
    /// Ingest outcomes per exchange, in header order.
    pub outcomes: BTreeMap<String, Vec<IngestOutcome>>,
    pub fake_payment: Hash256,
    pub all_rejected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReorgReport {
    pub payment_height: u64,
    pub fork_height: u64,
    pub branch_length: u64,
    pub honest_tip_at_attack: u64,
    pub double_spend_tx: Hash256,
    /// The buyer's payment is no longer on the final canonical chain.
    pub payment_reverted: bool,
    /// DataReleased responses any enclave gave the colluding buyer.
    pub releases_to_buyer: usize,
    /// Payment-evidence rejections the enclaves returned, by reason.
    pub rejections: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BuyerReport {
    pub endpoint: Endpoint,
    pub address: Address,
    pub outcome: Outcome,
    pub halted: bool,
    pub steps: Vec<(u8, u64)>,
    pub seller: Option<Address>,
    pub trade_ids: Vec<(String, TradeId)>,
    pub balance: Amount,
    pub initial_balance: Amount,
    /// Total of confirmed payments to the chosen seller.
    pub paid_to_seller: Amount,
    pub payment_depth: Option<u64>,
    pub holds_sample: bool,
    pub obtained_data: bool,
    pub data_matches: bool,
    pub attempted_cheat: bool,
    pub reviews_posted: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SellerReport {
    pub endpoint: Endpoint,
    pub address: Address,
    pub outcome: Outcome,
    pub halted: bool,
    pub steps: Vec<(u8, u64)>,
    pub deposited_at: Vec<String>,
    pub faking: bool,
    pub balance: Amount,
    /// Confirmed reviews about this seller on the final canonical chain.
    pub reviews_received: usize,
    pub mean_rating: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeReport {
    pub id: String,
    pub endpoint: Endpoint,
    pub owner: Address,
    pub alive: bool,
    pub tampered: bool,
    pub steps: Vec<ExchangeStep>,
    pub fee_income: Amount,
    pub sample_egress: usize,
    pub release_egress: usize,
    pub gc_removed: usize,
    pub live_trades: usize,
    pub retained_chunks: usize,
    pub trade_states: BTreeMap<String, usize>,
    pub headers_held: usize,
    pub header_rejects: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    /// Every buyer finished and the chain ran on for the settle period.
    Settled,
    Horizon,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub bytes: u64,
}

/// End state of one simulation.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub termination: Termination,
    pub sim_time_ms: u64,
    pub tip: Hash256,
    pub height: u64,
    pub blocks_mined: u64,
    pub buyers: Vec<BuyerReport>,
    pub sellers: Vec<SellerReport>,
    pub exchanges: Vec<ExchangeReport>,
    pub fake_chain: Option<FakeChainReport>,
    pub reorg: Option<ReorgReport>,
    pub network: NetStats,
    /// Chunk frames leaving exchanges checked against the egress logs.
    pub taint_checked_frames: usize,
    pub violations: Vec<Violation>,
    pub trace_digest: Hash256,
    pub trace_len: usize,
}

impl SimReport {
    pub fn fair(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Trace,
    pub report: SimReport,
}

/// Seed for a named sub-component, derived from the run seed.
pub fn derive_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut bytes = label.as_bytes().to_vec();
    bytes.extend_from_slice(&seed.to_le_bytes());
    hash(&bytes).0
}

/// The dataset every seller holds in a run with this seed.
pub fn dataset(seed: u64, size: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::from_seed(derive_seed(seed, "dataset"));
    let mut data = vec![0u8; size];
    rng.fill_bytes(&mut data);
    data
}

fn endpoint(s: String) -> Endpoint {
    Endpoint::new(s).expect("simulator endpoints are short")
}

/// Miner policy: each sender's payments go in without nonce gaps, so one
/// that overtook its predecessor on the network waits for it.
fn pick_transactions(chain: &ChainState, mempool: &[SignedTransaction], limit: usize) -> Vec<SignedTransaction> {
    let mut ledger = chain.ledger().clone();
    let mut payments: Vec<_> = mempool
        .iter()
        .filter_map(|t| match &t.tx {
            Transaction::Payment(p) => Some((p.from, p.nonce, t)),
            _ => None,
        })
        .collect();
    payments.sort_by_key(|(from, nonce, _)| (*from, *nonce));
    let reviews = mempool.iter().filter(|t| matches!(t.tx, Transaction::Review(_)));
    let mut out = Vec::new();
    for t in payments.into_iter().map(|(_, _, t)| t).chain(reviews) {
        if out.len() >= limit {
            break;
        }
        if let Transaction::Payment(p) = &t.tx {
            if p.nonce != ledger.next_nonce(&p.from) {
                continue;
            }
        }
        if ledger.apply(t).is_ok() {
            out.push(t.clone());
        }
    }
    out
}

fn open_code(e: &OpenTradeError) -> RejectCode {
    match e {
        OpenTradeError::InvalidEvidence(f) => fault_code(*f),
        OpenTradeError::FeeTooLow { .. } => RejectCode::FeeTooLow,
    }
}

fn fault_code(f: EvidenceFault) -> RejectCode {
    match f {
        EvidenceFault::Spv(s) => RejectCode::Spv(s),
        EvidenceFault::WrongRecipient => RejectCode::WrongRecipient,
        EvidenceFault::WrongPayer => RejectCode::WrongPayer,
        EvidenceFault::AlreadyUsed => RejectCode::AlreadyUsed,
    }
}

pub(super) struct World<'a> {
    pub cfg: &'a SimConfig,
    target: Target,
    queue: EventQueue<Event>,
    rng: ChaCha20Rng,
    pub trace: Trace,
    actors: BTreeMap<Endpoint, ActorId>,
    pub nodes: Vec<Node>,
    pub exchanges: Vec<ExchangeHost>,
    pub buyers: Vec<BuyerActor>,
    pub sellers: Vec<SellerActor>,
    pub data: Arc<Vec<u8>>,
    root: Arc<dyn RootOfTrust + Send + Sync>,
    attacker_key: KeyPair,
    attacker_chain: Option<ChainState>,
    attacker_endpoint: Endpoint,
    pub log: AuditLog,
    needles: Vec<memmem::Finder<'static>>,
    drop_rules: Vec<(MessageType, f64)>,
    pub stats: NetStats,
    pub blocks_mined: u64,
    base_ts: u64,
    settle_height: Option<u64>,
    stopped: Option<Termination>,
    kills_fired: Vec<bool>,
    tamper_fired: bool,
    pub fake_chain: Option<FakeChainReport>,
    pub reorg: Option<ReorgReport>,
    reorg_payment: Option<Hash256>,
    pre_attack_releases: usize,
}

impl<'a> World<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimConfigError> {
        cfg.validate()?;
        let target = cfg.network.target()?;
        let seed = cfg.seed;

        let buyer_keys: Vec<KeyPair> = (0..cfg.buyers)
            .map(|i| KeyPair::from_seed(derive_seed(seed, &format!("buyer-{i}"))))
            .collect();
        let seller_keys: Vec<KeyPair> = (0..cfg.sellers)
            .map(|i| KeyPair::from_seed(derive_seed(seed, &format!("seller-{i}"))))
            .collect();
        let owner_keys: Vec<KeyPair> = (0..cfg.exchanges)
            .map(|i| KeyPair::from_seed(derive_seed(seed, &format!("exchange-owner-{i}"))))
            .collect();
        let root_key = KeyPair::from_seed(derive_seed(seed, "root-of-trust"));
        let root: Arc<dyn RootOfTrust + Send + Sync> = Arc::new(SoftwareRoot::new(root_key.clone()));

        let mut net = NetworkConfig::new(
            target,
            buyer_keys
                .iter()
                .map(|k| Allocation {
                    address: k.address(),
                    amount: cfg.network.buyer_balance,
                })
                .collect(),
        );
        net.confirm_depth = cfg.network.confirm_depth;
        net.service_fee = cfg.network.service_fee;
        net.fifo_capacity = cfg.network.fifo_capacity;
        net.trade_timeout_secs = cfg.network.trade_timeout_secs;
        net.checkpoint_height = cfg.network.checkpoint_height;
        net.root_public_key = Some(root_key.public_key());
        net.exchanges = owner_keys
            .iter()
            .enumerate()
            .map(|(i, k)| crate::chain::ExchangeListing {
                id: format!("ex{i}"),
                owner: k.address(),
                endpoint: endpoint(format!("exchange-{i}")),
            })
            .collect();

        // Pre-mine up to the checkpoint so enclaves can anchor there.
        let mut chain = ChainState::new(net.clone());
        for h in 0..cfg.network.checkpoint_height {
            let parent = chain.tip_header().clone();
            let b = mine_block(&parent, vec![], target, net.genesis_timestamp + h + 1).expect("target below max");
            chain.validate_and_apply(b).expect("pre-mined block applies");
        }
        let checkpoint_hash = chain
            .canonical_hash_at(cfg.network.checkpoint_height)
            .expect("pre-mined");
        let base_ts = chain.tip_header().timestamp;

        let data = Arc::new(dataset(seed, cfg.data_size));
        let mut trace = Trace::default();
        let mut actors = BTreeMap::new();

        let nodes: Vec<Node> = (0..cfg.nodes)
            .map(|i| {
                let ep = endpoint(format!("node-{i}"));
                actors.insert(ep.clone(), ActorId::Node(i));
                Node {
                    endpoint: ep,
                    chain: chain.clone(),
                    mempool: Vec::new(),
                    seen: HashSet::new(),
                }
            })
            .collect();

        let halt = cfg.adversary.halt;
        let mut infos = Vec::new();
        let mut exchanges = Vec::new();
        for (i, owner) in owner_keys.iter().enumerate() {
            let listing = &net.exchanges[i];
            let honest_config = EnclaveConfig::from_network(&net, checkpoint_hash, owner.address());
            let ex_seed = derive_seed(seed, &format!("enclave-{i}"));
            let mut enclave = Enclave::launch(honest_config.clone(), root.clone(), ex_seed);
            if cfg.disable_release_gate {
                enclave.set_release_gate(ReleaseGate::Disabled);
            }
            infos.push(ExchangeInfo {
                id: listing.id.clone(),
                owner: owner.address(),
                endpoint: listing.endpoint.clone(),
                measurement: honest_config.identity().measurement(),
            });
            actors.insert(listing.endpoint.clone(), ActorId::Exchange(i));
            exchanges.push(ExchangeHost {
                id: listing.id.clone(),
                endpoint: listing.endpoint.clone(),
                owner: owner.clone(),
                chain: chain.clone(),
                enclave,
                honest_config,
                alive: true,
                tampered_at: None,
                halt_at: halt.filter(|h| h.party == Party::Exchange && h.index == i).map(|h| h.step),
                steps: Vec::new(),
                gc_removed: 0,
                header_rejects: 0,
                trades: BTreeMap::new(),
                seed: ex_seed,
                retired_egress: Vec::new(),
                retired_transitions: Vec::new(),
            });
        }

        let max_delay = match cfg.delay {
            DelayModel::Fixed { ms } => ms,
            DelayModel::Uniform { max_ms, .. } => max_ms,
        };
        let k = cfg.network.confirm_depth;
        let wait_timeout_ms = (2 * k + 6) * cfg.block_interval_ms;
        let seller_endpoints: Vec<Endpoint> =
            (0..cfg.sellers).map(|i| endpoint(format!("seller-{i}"))).collect();
        let tags: BTreeSet<String> = ["weather", "hourly", "csv"].iter().map(|s| s.to_string()).collect();

        let sellers: Vec<SellerActor> = seller_keys
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let ep = seller_endpoints[i].clone();
                actors.insert(ep.clone(), ActorId::Seller(i));
                let session = SellerSession::new(SellerConfig {
                    key: key.clone(),
                    endpoint: ep.clone(),
                    listing: Listing {
                        seller: key.address(),
                        endpoint: ep,
                        tags: tags.clone(),
                        size: data.len() as u64,
                        min_price: cfg.price,
                    },
                    data: data.clone(),
                    known_exchanges: infos.clone(),
                    root_key: root_key.public_key(),
                    wait_timeout_ms,
                    halt_at: halt.filter(|h| h.party == Party::Seller && h.index == i).map(|h| h.step),
                    fake_data: cfg.adversary.fake_data.contains(&i),
                    seed: derive_seed(seed, &format!("seller-session-{i}")),
                });
                SellerActor {
                    session,
                    traced_steps: 0,
                    traced_outcome: Outcome::InProgress,
                }
            })
            .collect();

        let n = cfg.trade_exchanges();
        let buyers: Vec<BuyerActor> = buyer_keys
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let ep = endpoint(format!("buyer-{i}"));
                actors.insert(ep.clone(), ActorId::Buyer(i));
                let behavior = if i == 0 && cfg.adversary.reorg.is_some() {
                    BuyerBehavior::SubmitEarly
                } else {
                    BuyerBehavior::Honest
                };
                let session = BuyerSession::new(BuyerConfig {
                    key: key.clone(),
                    endpoint: ep,
                    node: nodes[i % nodes.len()].endpoint.clone(),
                    peers: seller_endpoints.clone(),
                    spec: DataSpec {
                        tags: ["weather".to_string()].into_iter().collect(),
                        min_size: 1,
                        max_size: u64::MAX,
                    },
                    price: cfg.price,
                    exchanges: infos[..n].to_vec(),
                    root_key: root_key.public_key(),
                    confirm_depth: k,
                    service_fee: cfg.network.service_fee,
                    verifier: Arc::new(ExpectedFile(data.clone())),
                    reply_window_ms: 4 * max_delay + 10,
                    wait_timeout_ms,
                    max_retries: (2 * k + 6) as u32,
                    behavior,
                    halt_at: halt.filter(|h| h.party == Party::Buyer && h.index == i).map(|h| h.step),
                    seed: derive_seed(seed, &format!("buyer-session-{i}")),
                });
                BuyerActor {
                    session,
                    chain: chain.clone(),
                    key: key.clone(),
                    traced_steps: 0,
                    traced_outcome: Outcome::InProgress,
                }
            })
            .collect();

        let attacker_endpoint = endpoint("attacker".to_string());
        actors.insert(attacker_endpoint.clone(), ActorId::Attacker);

        let needles = (0..data.len().saturating_sub(WINDOW - 1))
            .step_by(WINDOW_STRIDE)
            .chain(std::iter::once(data.len().saturating_sub(WINDOW)))
            .map(|off| memmem::Finder::new(&data[off..(off + WINDOW).min(data.len())]).into_owned())
            .collect();

        let drop_rules = cfg
            .adversary
            .drop
            .iter()
            .map(|d| (MessageType::from_name(&d.message).expect("validated"), d.probability))
            .collect();

        trace.push(0, "world", "config", cfg.to_json().as_bytes());

        let mut world = World {
            cfg,
            target,
            queue: EventQueue::new(),
            rng: ChaCha20Rng::from_seed(derive_seed(seed, "network")),
            trace,
            actors,
            nodes,
            exchanges,
            buyers,
            sellers,
            data,
            root,
            attacker_key: KeyPair::from_seed(derive_seed(seed, "attacker")),
            attacker_chain: None,
            attacker_endpoint,
            log: AuditLog::default(),
            needles,
            drop_rules,
            stats: NetStats::default(),
            blocks_mined: 0,
            base_ts,
            settle_height: None,
            stopped: None,
            kills_fired: vec![false; cfg.adversary.kill_exchange.len()],
            tamper_fired: false,
            fake_chain: None,
            reorg: None,
            reorg_payment: None,
            pre_attack_releases: 0,
        };
        if let Some(t) = cfg.adversary.tamper_enclave {
            if t.from_step <= 1 {
                world.tamper(t.exchange);
            }
        }
        for i in 0..world.buyers.len() {
            world.queue.schedule_at(0, Event::Start(i));
        }
        world.queue.schedule_at(cfg.block_interval_ms, Event::Mine);
        Ok(world)
    }

    fn now(&self) -> u64 {
        self.queue.now()
    }

    pub(super) fn role_of(&self, ep: &Endpoint) -> Option<ActorId> {
        self.actors.get(ep).copied()
    }

    fn endpoint_of(&self, id: ActorId) -> Endpoint {
        match id {
            ActorId::Node(i) => self.nodes[i].endpoint.clone(),
            ActorId::Exchange(i) => self.exchanges[i].endpoint.clone(),
            ActorId::Buyer(i) => self.buyers[i].session.endpoint().clone(),
            ActorId::Seller(i) => self.sellers[i].session.endpoint().clone(),
            ActorId::Attacker => self.attacker_endpoint.clone(),
        }
    }

    fn chain_of(&self, id: ActorId) -> Option<&ChainState> {
        match id {
            ActorId::Node(i) => Some(&self.nodes[i].chain),
            ActorId::Exchange(i) => Some(&self.exchanges[i].chain),
            ActorId::Buyer(i) => Some(&self.buyers[i].chain),
            ActorId::Attacker => self.attacker_chain.as_ref(),
            ActorId::Seller(_) => None,
        }
    }

    fn chain_mut(&mut self, id: ActorId) -> Option<&mut ChainState> {
        match id {
            ActorId::Node(i) => Some(&mut self.nodes[i].chain),
            ActorId::Exchange(i) => Some(&mut self.exchanges[i].chain),
            ActorId::Buyer(i) => Some(&mut self.buyers[i].chain),
            ActorId::Attacker => self.attacker_chain.as_mut(),
            ActorId::Seller(_) => None,
        }
    }

    // ---- transport ----

    fn sample_delay(&mut self) -> u64 {
        match self.cfg.delay {
            DelayModel::Fixed { ms } => ms,
            DelayModel::Uniform { min_ms, max_ms } => self.rng.gen_range(min_ms..=max_ms),
        }
    }

    fn send(&mut self, from: &Endpoint, to: &Endpoint, msg: &Message) {
        let kind = msg.kind();
        let frame = msg.to_frame();
        self.stats.sent += 1;
        self.stats.bytes += frame.len() as u64;
        if self.needles.iter().any(|f| f.find(&frame).is_some()) {
            self.log.leaks.push(LeakRecord {
                from: from.clone(),
                to: to.clone(),
                kind,
            });
        }
        if let Some(ActorId::Exchange(x)) = self.actors.get(from).copied() {
            match msg {
                Message::Sample { id, chunk } => self.log.chunk_frames.push(ChunkFrame {
                    exchange: x,
                    kind,
                    trade_id: *id,
                    indices: vec![chunk.index],
                }),
                Message::DataRelease { id, chunks } => self.log.chunk_frames.push(ChunkFrame {
                    exchange: x,
                    kind,
                    trade_id: *id,
                    indices: chunks.iter().map(|c| c.index).collect(),
                }),
                _ => {}
            }
        }
        if let (Message::DepositData { .. }, Some(ActorId::Exchange(x))) = (msg, self.actors.get(to).copied()) {
            self.log.deposits.push(DepositRecord {
                seller: from.clone(),
                exchange: x,
                time: self.now(),
            });
        }
        let now = self.now();
        self.trace.push(now, from.as_str(), format!("send:{}>{}", kind.name(), to), &frame);
        for i in 0..self.drop_rules.len() {
            let (t, p) = self.drop_rules[i];
            if t == kind && self.rng.gen::<f64>() < p {
                self.stats.dropped += 1;
                self.trace.push(now, to.as_str(), format!("drop:{}", kind.name()), &frame);
                return;
            }
        }
        let delay = self.sample_delay();
        self.queue.schedule_in(
            delay,
            Event::Deliver {
                from: from.clone(),
                to: to.clone(),
                frame,
            },
        );
    }

    fn dispatch(&mut self, actor: ActorId, actions: Vec<Action>) {
        let from = self.endpoint_of(actor);
        for a in actions {
            match a {
                Action::Send { to, msg } => self.send(&from, &to, &msg),
                Action::Timer { after_ms, token } => {
                    self.queue.schedule_in(after_ms, Event::Timer { actor, token });
                }
            }
        }
    }

    fn broadcast_block(&mut self, from: ActorId, block: &Block) {
        let from_ep = self.endpoint_of(from);
        let msg = Message::Block(block.clone());
        let mut targets: Vec<Endpoint> = Vec::new();
        targets.extend(self.nodes.iter().map(|n| n.endpoint.clone()));
        targets.extend(self.exchanges.iter().map(|e| e.endpoint.clone()));
        targets.extend(self.buyers.iter().map(|b| b.session.endpoint().clone()));
        for t in targets {
            if t != from_ep {
                self.send(&from_ep, &t, &msg);
            }
        }
    }

    // ---- chain replicas ----

    /// Imports `block` into `who`'s replica, pulling any missing ancestors
    /// from the sender. Returns whether the tip changed, and the outcome.
    fn import(&mut self, who: ActorId, sender: Option<ActorId>, block: Block) -> Option<ApplyOutcome> {
        let hash = block.hash();
        let chain = self.chain_of(who)?;
        if chain.contains(&hash) {
            return None;
        }
        let mut missing = Vec::new();
        if !chain.contains(&block.header.prev_hash) {
            if let Some(src) = sender.and_then(|s| self.chain_of(s)) {
                let mut cursor = block.header.prev_hash;
                while !chain.contains(&cursor) {
                    let Some(b) = src.block(&cursor) else {
                        break;
                    };
                    missing.push(b.clone());
                    cursor = b.header.prev_hash;
                }
            }
        }
        if !missing.is_empty() {
            let now = self.now();
            let ep = self.endpoint_of(who);
            self.trace.push(now, ep.as_str(), "sync", &(missing.len() as u64).to_le_bytes());
        }
        let chain = self.chain_mut(who)?;
        let mut last = None;
        for b in missing.into_iter().rev().chain(std::iter::once(block)) {
            match chain.validate_and_apply(b) {
                Ok(o) => {
                    if o != ApplyOutcome::SideBranch || last.is_none() {
                        last = Some(o);
                    }
                }
                Err(_) => return None,
            }
        }
        last
    }

    fn node_after_tip_change(&mut self, i: usize, outcome: &ApplyOutcome) {
        let node = &mut self.nodes[i];
        if let ApplyOutcome::Reorganized { common_height, old_tip } = outcome {
            let mut cursor = *old_tip;
            while let Some(b) = node.chain.block(&cursor) {
                if b.header.height <= *common_height {
                    break;
                }
                for t in &b.transactions {
                    node.mempool.push(t.clone());
                }
                cursor = b.header.prev_hash;
            }
        }
        let ledger = node.chain.ledger().clone();
        let chain = &node.chain;
        node.mempool.retain(|t| {
            if chain.locate_transaction(&t.tx.tx_hash()).is_some() {
                return false;
            }
            ledger.clone().apply(t).is_ok()
        });
        let mut seen = HashSet::new();
        node.mempool.retain(|t| seen.insert(t.tx.tx_hash()));
    }

    fn feed_headers(&mut self, x: usize) {
        let host = &mut self.exchanges[x];
        let cp = host.enclave.headers().checkpoint().0;
        let mut pending = Vec::new();
        let mut cursor = host.chain.tip_hash();
        while let Some(b) = host.chain.block(&cursor) {
            if b.header.height <= cp || host.enclave.headers().contains(&cursor) {
                break;
            }
            pending.push(b.header.clone());
            cursor = b.header.prev_hash;
        }
        for h in pending.iter().rev() {
            if host.enclave.ingest_header(h) != IngestOutcome::Accepted {
                host.header_rejects += 1;
            }
        }
        for r in host.enclave.drain_gc_reports() {
            host.gc_removed += r.removed_count();
        }
    }

    // ---- event handlers ----

    fn deliver(&mut self, from: Endpoint, to: Endpoint, frame: Vec<u8>) {
        let now = self.now();
        let Some(&target) = self.actors.get(&to) else {
            return;
        };
        let msg = match Message::from_frame(&frame) {
            Ok(m) => m,
            Err(_) => {
                self.trace.push(now, to.as_str(), "deliver:malformed", &frame);
                return;
            }
        };
        if let ActorId::Exchange(x) = target {
            if !self.exchanges[x].alive {
                self.stats.dropped += 1;
                self.trace.push(now, to.as_str(), format!("drop:dead:{}", msg.kind().name()), &frame);
                return;
            }
        }
        self.stats.delivered += 1;
        self.trace.push(now, to.as_str(), format!("deliver:{}<{}", msg.kind().name(), from), &frame);
        let sender = self.actors.get(&from).copied();
        match target {
            ActorId::Node(i) => self.on_node(i, sender, msg),
            ActorId::Exchange(x) => self.on_exchange(x, &from, sender, msg),
            ActorId::Buyer(i) => {
                if let Message::Block(b) = msg {
                    if let Some(o) = self.import(target, sender, b) {
                        if o != ApplyOutcome::SideBranch {
                            let bu = &mut self.buyers[i];
                            let acts = bu.session.on_block(&bu.chain, now);
                            self.dispatch(target, acts);
                        }
                    }
                } else {
                    let bu = &mut self.buyers[i];
                    let acts = bu.session.on_message(&from, msg, &bu.chain, now);
                    self.dispatch(target, acts);
                }
            }
            ActorId::Seller(i) => {
                let acts = self.sellers[i].session.on_message(&from, msg, now);
                self.dispatch(target, acts);
            }
            ActorId::Attacker => {}
        }
    }

    fn on_node(&mut self, i: usize, sender: Option<ActorId>, msg: Message) {
        match msg {
            Message::Tx(tx) => {
                let h = tx.tx.tx_hash();
                if self.nodes[i].seen.contains(&h) || tx.check_authorization() != Ok(true) {
                    return;
                }
                self.nodes[i].seen.insert(h);
                self.nodes[i].mempool.push(tx.clone());
                let from = self.nodes[i].endpoint.clone();
                let peers: Vec<Endpoint> = self
                    .nodes
                    .iter()
                    .filter(|n| n.endpoint != from)
                    .map(|n| n.endpoint.clone())
                    .collect();
                for p in peers {
                    self.send(&from, &p, &Message::Tx(tx.clone()));
                }
            }
            Message::Block(b) => {
                if let Some(o) = self.import(ActorId::Node(i), sender, b) {
                    if o != ApplyOutcome::SideBranch {
                        self.node_after_tip_change(i, &o);
                    }
                }
            }
            _ => {}
        }
    }

    /// Records that exchange `x` is handling a request of `step`. Returns
    /// false if the host crashes here instead.
    fn exchange_gate(&mut self, x: usize, step: u8) -> bool {
        let host = &mut self.exchanges[x];
        if host.halt_at.is_some_and(|h| step >= h) {
            host.alive = false;
            let now = self.queue.now();
            self.trace.push(now, host.endpoint.as_str(), format!("halt:{step}"), &[]);
            return false;
        }
        true
    }

    fn exchange_step(&mut self, x: usize, step: u8, peer: &Endpoint) {
        let now = self.now();
        let host = &mut self.exchanges[x];
        host.steps.push(ExchangeStep {
            step,
            peer: peer.clone(),
            time: now,
        });
        self.trace.push(now, host.endpoint.as_str(), format!("step:{step}"), peer.as_str().as_bytes());
    }

    fn enclave_event(&mut self, x: usize, what: &str, detail: &[u8]) {
        let now = self.now();
        let ep = self.exchanges[x].endpoint.clone();
        self.trace.push(now, ep.as_str(), format!("enclave:{what}"), detail);
    }

    fn on_exchange(&mut self, x: usize, from: &Endpoint, sender: Option<ActorId>, msg: Message) {
        let me = self.exchanges[x].endpoint.clone();
        match msg {
            Message::Block(b) => {
                if let Some(o) = self.import(ActorId::Exchange(x), sender, b) {
                    if o != ApplyOutcome::SideBranch {
                        self.feed_headers(x);
                    }
                }
            }
            Message::AttestRequest { challenge } => {
                let step = if matches!(sender, Some(ActorId::Seller(_))) { 6 } else { 1 };
                if !self.exchange_gate(x, step) {
                    return;
                }
                let report = self.exchanges[x].enclave.attest(challenge);
                self.exchange_step(x, step, from);
                self.enclave_event(x, "attest", &report.encode());
                self.send(&me, from, &Message::AttestResponse(report));
            }
            Message::OpenTrade(req) => {
                if !self.exchange_gate(x, 4) {
                    return;
                }
                let res = self.exchanges[x].enclave.open_trade(
                    &req.service_evidence,
                    req.price,
                    req.buyer,
                    req.seller,
                    req.buyer_endpoint.clone(),
                );
                match res {
                    Ok(t) => {
                        self.exchanges[x].trades.insert(t.id, req.buyer_endpoint.clone());
                        self.exchange_step(x, 4, &req.buyer_endpoint);
                        self.enclave_event(x, "open_trade:ok", &t.id.0);
                        self.send(&me, &t.notify, &Message::TradeOpened { id: t.id });
                    }
                    Err(e) => {
                        self.enclave_event(x, "open_trade:rejected", e.to_string().as_bytes());
                        self.send(&me, from, &Message::OpenRejected(open_code(&e)));
                    }
                }
            }
            Message::ParamsRequest { id } => {
                if !self.exchange_gate(x, 7) {
                    return;
                }
                let params = self.exchanges[x].enclave.get_trade_params(&id);
                self.exchange_step(x, 7, from);
                self.send(&me, from, &Message::ParamsResponse { id, params });
            }
            Message::DepositData { id, chunks } => {
                if !self.exchange_gate(x, 9) {
                    return;
                }
                let result = match self.exchanges[x].enclave.deposit_data(&id, chunks) {
                    DepositOutcome::SampleSent { to, sample } => {
                        self.exchange_step(x, 9, from);
                        self.enclave_event(x, "deposit:ok", &id.0);
                        self.send(&me, &to, &Message::Sample { id, chunk: sample });
                        None
                    }
                    DepositOutcome::UnknownId => Some(RejectCode::UnknownId),
                    DepositOutcome::WrongState(_) => Some(RejectCode::WrongState),
                    DepositOutcome::MalformedChunks => Some(RejectCode::Malformed),
                };
                if result.is_some() {
                    self.enclave_event(x, "deposit:rejected", &id.0);
                }
                self.send(&me, from, &Message::DepositAck { id, result });
            }
            Message::PaymentEvidence { id, evidence } => {
                if !self.exchange_gate(x, 13) {
                    return;
                }
                let outcome = self.exchanges[x].enclave.submit_payment_evidence(&id, &evidence);
                let code = match outcome {
                    PaymentOutcome::DataReleased { to, chunks } => {
                        self.exchange_step(x, 13, &to);
                        self.enclave_event(x, "payment:released", &id.0);
                        self.log.releases.push(ReleaseRecord {
                            exchange: x,
                            trade_id: id,
                            buyer: to.clone(),
                        });
                        self.note_reorg_release(&to);
                        self.send(&me, &to, &Message::DataRelease { id, chunks });
                        if !self.exchange_gate(x, 15) {
                            return;
                        }
                        let host = &mut self.exchanges[x];
                        let now = host.enclave.now();
                        let removed = host.enclave.gc(now).removed_count();
                        host.gc_removed += removed;
                        self.exchange_step(x, 15, &to);
                        self.enclave_event(x, "gc", &(removed as u64).to_le_bytes());
                        return;
                    }
                    PaymentOutcome::EvidenceRejected(f) => fault_code(f),
                    PaymentOutcome::MismatchedTerms => RejectCode::MismatchedTerms,
                    PaymentOutcome::UnknownId => RejectCode::UnknownId,
                    PaymentOutcome::WrongState(_) => RejectCode::WrongState,
                };
                self.note_reorg_rejection(from, code);
                self.enclave_event(x, "payment:rejected", format!("{code:?}").as_bytes());
                self.send(&me, from, &Message::PaymentRejected { id, code });
            }
            _ => {}
        }
    }

    fn mine(&mut self) {
        let now = self.now();
        let node = &self.nodes[0];
        let txs = pick_transactions(&node.chain, &node.mempool, BLOCK_CAPACITY);
        let parent = node.chain.tip_header().clone();
        let ts = (self.base_ts + now / 1000).max(parent.timestamp);
        let block = mine_block(&parent, txs, self.target, ts).expect("target below max");
        self.blocks_mined += 1;
        self.trace.push(now, "node-0", "mine", &block.header.encode());
        if let Some(o) = self.import(ActorId::Node(0), None, block.clone()) {
            self.node_after_tip_change(0, &o);
        }
        self.broadcast_block(ActorId::Node(0), &block);
        self.maybe_reorg();

        let height = self.nodes[0].chain.height();
        if self.settle_height.is_some_and(|h| height >= h) {
            self.stopped = Some(Termination::Settled);
        } else if self.blocks_mined >= self.cfg.horizon_blocks {
            self.stopped = Some(Termination::Horizon);
        } else {
            self.queue.schedule_in(self.cfg.block_interval_ms, Event::Mine);
        }
    }

    // ---- adversary ----

    fn progress(&self) -> u8 {
        self.buyers
            .iter()
            .filter_map(|b| b.session.steps().last())
            .max()
            .unwrap_or(0)
    }

    fn tamper(&mut self, x: usize) {
        let now = self.now();
        let host = &mut self.exchanges[x];
        let mut cfg = host.honest_config.clone();
        cfg.program_version.push_str("+tampered");
        let mut enclave = Enclave::launch(cfg, self.root.clone(), host.seed);
        enclave.set_release_gate(ReleaseGate::Disabled);
        host.retired_egress.extend_from_slice(host.enclave.egress_log());
        host.retired_transitions.extend_from_slice(host.enclave.transition_log());
        host.enclave = enclave;
        host.tampered_at = Some(now);
        self.trace.push(now, host.endpoint.as_str(), "attack:tamper", &[]);
        self.feed_headers(x);
    }

    fn adversary_hooks(&mut self) {
        let progress = self.progress();
        for (i, k) in self.cfg.adversary.kill_exchange.iter().enumerate() {
            if !self.kills_fired[i] && progress >= k.after_step {
                self.kills_fired[i] = true;
                let host = &mut self.exchanges[k.exchange];
                host.alive = false;
                let now = self.queue.now();
                self.trace.push(now, host.endpoint.as_str(), "attack:kill", &[]);
            }
        }
        if let Some(t) = self.cfg.adversary.tamper_enclave {
            if !self.tamper_fired && t.from_step > 1 && progress + 1 >= t.from_step {
                self.tamper_fired = true;
                self.tamper(t.exchange);
            }
        }
        if let Some(f) = self.cfg.adversary.fake_chain {
            if self.fake_chain.is_none() && self.buyers[0].session.steps().steps().contains(&5) {
                self.fake_chain_attack(f.easier_shift, f.length);
            }
        }
    }

    /// Colluding hosts feed their enclaves a cheaply mined chain holding a
    /// payment that exists nowhere else, and the buyer presents it.
    fn fake_chain_attack(&mut self, shift: u32, length: u64) {
        let now = self.now();
        let fake_target = self.target.easier_by_shift(shift);
        let buyer = &self.buyers[0];
        let seller = buyer.session.seller().expect("buyer chose a seller").seller;
        let nonce = buyer.chain.next_nonce(&buyer.key.address()) + 1000;
        let pay = SignedTransaction::payment(&buyer.key, seller, self.cfg.price, nonce);
        let pay_hash = pay.tx.tx_hash();
        let mut parent = self.exchanges[0].chain.tip_header().clone();
        let mut blocks = Vec::new();
        for i in 0..length {
            let txs = if i == 0 { vec![pay.clone()] } else { vec![] };
            let ts = (self.base_ts + now / 1000).max(parent.timestamp);
            let b = mine_block(&parent, txs, fake_target, ts).expect("easy target");
            parent = b.header.clone();
            blocks.push(b);
        }
        let first = &blocks[0];
        let Transaction::Payment(p) = &pay.tx else {
            unreachable!("built as a payment")
        };
        let evidence = PaymentEvidence {
            tx: p.clone(),
            path: merkle::path(&first.leaf_hashes(), 0).expect("one leaf"),
            leaf_index: 0,
            block_height: first.header.height,
            block_hash: first.hash(),
        };
        let mut outcomes = BTreeMap::new();
        for x in 0..self.exchanges.len() {
            if !self.exchanges[x].alive {
                continue;
            }
            let res: Vec<IngestOutcome> = blocks
                .iter()
                .map(|b| self.exchanges[x].enclave.ingest_header(&b.header))
                .collect();
            outcomes.insert(self.exchanges[x].id.clone(), res);
        }
        let all_rejected = outcomes.values().flatten().all(|o| *o != IngestOutcome::Accepted);
        self.trace.push(now, "attacker", "attack:fake_chain", &blocks[0].header.encode());
        self.buyers[0].session.inject_fake_payment(evidence);
        self.fake_chain = Some(FakeChainReport {
            fake_target,
            headers: length,
            outcomes,
            fake_payment: pay_hash,
            all_rejected,
        });
    }

    /// A miner colluding with buyer 0 replaces the block holding its
    /// payment once the payment is one block short of final.
    fn maybe_reorg(&mut self) {
        let Some(spec) = self.cfg.adversary.reorg else {
            return;
        };
        if self.reorg.is_some() {
            return;
        }
        let Some(pay) = self.buyers[0].session.payment_tx() else {
            return;
        };
        let k = self.cfg.network.confirm_depth;
        let chain = &self.nodes[0].chain;
        let Some(depth) = chain.confirmations(&pay) else {
            return;
        };
        if depth + 1 < k {
            return;
        }
        let (pay_height, block_hash, idx) = chain.locate_transaction(&pay).expect("confirmed");
        let Transaction::Payment(p) = &chain.block(&block_hash).expect("canonical").transactions[idx].tx else {
            return;
        };
        let nonce = p.nonce;
        let fork = spec.fork_height.unwrap_or(pay_height - 1).min(pay_height - 1);
        let tip = chain.height();
        let len = spec.branch_length.unwrap_or(tip - fork + 1);
        let mut attacker = chain.clone();
        let double = SignedTransaction::payment(&self.buyers[0].key, self.attacker_key.address(), self.cfg.price, nonce);
        let double_hash = double.tx.tx_hash();
        let mut parent = chain.canonical_block_at(fork).expect("fork below tip").header.clone();
        let now = self.now();
        let mut branch = Vec::new();
        for i in 0..len {
            let txs = if i == 0 { vec![double.clone()] } else { vec![] };
            let ts = (self.base_ts + now / 1000).max(parent.timestamp);
            let b = mine_block(&parent, txs, self.target, ts).expect("target below max");
            parent = b.header.clone();
            attacker.validate_and_apply(b.clone()).expect("attacker block valid");
            branch.push(b);
        }
        self.attacker_chain = Some(attacker);
        self.trace.push(now, "attacker", "attack:reorg", &double_hash.0);
        for b in &branch {
            self.broadcast_block(ActorId::Attacker, b);
        }
        self.reorg_payment = Some(pay);
        self.reorg = Some(ReorgReport {
            payment_height: pay_height,
            fork_height: fork,
            branch_length: len,
            honest_tip_at_attack: tip,
            double_spend_tx: double_hash,
            payment_reverted: false,
            releases_to_buyer: 0,
            rejections: BTreeMap::new(),
        });
    }

    fn note_reorg_release(&mut self, to: &Endpoint) {
        if self.cfg.adversary.reorg.is_some() && to == self.buyers[0].session.endpoint() {
            if let Some(r) = &mut self.reorg {
                r.releases_to_buyer += 1;
            } else {
                // Released before the attack even fired: still a failure of
                // the defence, so count it.
                self.pre_attack_releases += 1;
            }
        }
    }

    fn note_reorg_rejection(&mut self, from: &Endpoint, code: RejectCode) {
        if let Some(r) = &mut self.reorg {
            if from == self.buyers[0].session.endpoint() {
                *r.rejections.entry(format!("{code:?}")).or_default() += 1;
            }
        }
    }

    // ---- bookkeeping ----

    fn trace_sessions(&mut self) {
        let now = self.now();
        for b in &mut self.buyers {
            let entries = &b.session.steps().entries;
            for (s, _) in &entries[b.traced_steps..] {
                self.trace.push(now, b.session.endpoint().as_str(), format!("step:{s}"), &[]);
            }
            b.traced_steps = entries.len();
            let o = b.session.outcome();
            if o != b.traced_outcome {
                b.traced_outcome = o;
                self.trace.push(now, b.session.endpoint().as_str(), format!("outcome:{o:?}"), &[]);
            }
        }
        for s in &mut self.sellers {
            let entries = &s.session.steps().entries;
            for (st, _) in &entries[s.traced_steps..] {
                self.trace.push(now, s.session.endpoint().as_str(), format!("step:{st}"), &[]);
            }
            s.traced_steps = entries.len();
            let o = s.session.outcome();
            if o != s.traced_outcome {
                s.traced_outcome = o;
                self.trace.push(now, s.session.endpoint().as_str(), format!("outcome:{o:?}"), &[]);
            }
        }
        if self.settle_height.is_none() && self.buyers.iter().all(|b| b.session.outcome().is_terminal()) {
            self.settle_height = Some(self.nodes[0].chain.height() + self.cfg.network.confirm_depth + 2);
        }
    }

    fn run(&mut self) {
        while let Some((_, ev)) = self.queue.pop() {
            let now = self.now();
            match ev {
                Event::Start(i) => {
                    let acts = self.buyers[i].session.start(now);
                    self.dispatch(ActorId::Buyer(i), acts);
                }
                Event::Mine => self.mine(),
                Event::Deliver { from, to, frame } => self.deliver(from, to, frame),
                Event::Timer { actor, token } => {
                    let acts = match actor {
                        ActorId::Buyer(i) => {
                            let b = &mut self.buyers[i];
                            b.session.on_timer(token, &b.chain, now)
                        }
                        ActorId::Seller(i) => self.sellers[i].session.on_timer(token, now),
                        _ => Vec::new(),
                    };
                    self.dispatch(actor, acts);
                }
            }
            self.adversary_hooks();
            self.trace_sessions();
            if self.stopped.is_some() {
                break;
            }
        }
    }

    fn report(&mut self) -> SimReport {
        let chain = &self.nodes[0].chain;
        let k = self.cfg.network.confirm_depth;
        let buyers = self
            .buyers
            .iter()
            .map(|b| {
                let s = &b.session;
                let seller = s.seller().map(|r| r.seller);
                let payments = seller.map(|sa| chain.payments_between(&b.key.address(), &sa)).unwrap_or_default();
                let paid_to_seller = payments.iter().filter(|(_, d)| *d >= k).map(|(p, _)| p.amount).sum();
                let payment_depth = s.payment_tx().and_then(|h| chain.confirmations(&h));
                BuyerReport {
                    endpoint: s.endpoint().clone(),
                    address: b.key.address(),
                    outcome: s.outcome(),
                    halted: s.is_halted(),
                    steps: s.steps().entries.clone(),
                    seller,
                    trade_ids: s.trade_ids(),
                    balance: chain.balance(&b.key.address()),
                    initial_balance: self.cfg.network.buyer_balance,
                    paid_to_seller,
                    payment_depth,
                    holds_sample: s.sample().is_some(),
                    obtained_data: s.obtained_data().is_some(),
                    data_matches: s.obtained_data() == Some(self.data.as_slice()),
                    attempted_cheat: s.attempted_cheat(),
                    reviews_posted: s.reviews().len(),
                }
            })
            .collect();
        let sellers = self
            .sellers
            .iter()
            .map(|sa| {
                let s = &sa.session;
                SellerReport {
                    endpoint: s.endpoint().clone(),
                    address: s.address(),
                    outcome: s.outcome(),
                    halted: s.is_halted(),
                    steps: s.steps().entries.clone(),
                    deposited_at: s.deposited_at(),
                    faking: s.is_faking(),
                    balance: chain.balance(&s.address()),
                    reviews_received: chain.query_reviews(&s.address()).len(),
                    mean_rating: chain.mean_rating(&s.address()),
                }
            })
            .collect();
        let exchanges = self
            .exchanges
            .iter()
            .map(|h| {
                let egress = h.enclave.egress_log();
                ExchangeReport {
                    id: h.id.clone(),
                    endpoint: h.endpoint.clone(),
                    owner: h.owner.address(),
                    alive: h.alive,
                    tampered: h.tampered_at.is_some(),
                    steps: h.steps.clone(),
                    fee_income: chain.balance(&h.owner.address()),
                    sample_egress: egress
                        .iter()
                        .filter(|e| e.channel == crate::exchange::EgressChannel::Sample)
                        .count(),
                    release_egress: egress
                        .iter()
                        .filter(|e| e.channel == crate::exchange::EgressChannel::Release)
                        .count(),
                    gc_removed: h.gc_removed,
                    live_trades: h.enclave.live_trades(),
                    retained_chunks: h.enclave.retained_chunks(),
                    trade_states: h
                        .enclave
                        .trade_counts()
                        .into_iter()
                        .map(|(s, n)| (format!("{s:?}"), n))
                        .collect(),
                    headers_held: h.enclave.headers().len(),
                    header_rejects: h.header_rejects,
                }
            })
            .collect();
        if let Some(r) = &mut self.reorg {
            let pay = self.reorg_payment.expect("set with the report");
            r.payment_reverted = chain.locate_transaction(&pay).is_none();
            r.releases_to_buyer += self.pre_attack_releases;
        }
        let mut report = SimReport {
            seed: self.cfg.seed,
            termination: self.stopped.unwrap_or(Termination::Horizon),
            sim_time_ms: self.now(),
            tip: chain.tip_hash(),
            height: chain.height(),
            blocks_mined: self.blocks_mined,
            buyers,
            sellers,
            exchanges,
            fake_chain: self.fake_chain.clone(),
            reorg: self.reorg.clone(),
            network: self.stats.clone(),
            taint_checked_frames: self.log.chunk_frames.len(),
            violations: Vec::new(),
            trace_digest: Hash256::ZERO,
            trace_len: 0,
        };
        report.violations = audit::check(self, &report);
        for v in &report.violations {
            let now = self.now();
            self.trace.push(now, "auditor", format!("violation:{}", v.kind.name()), v.detail.as_bytes());
        }
        let now = self.now();
        self.trace.push(now, "world", "end", &report.tip.0);
        report.trace_digest = self.trace.digest();
        report.trace_len = self.trace.len();
        report
    }
}

/// Runs one simulation to completion.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput, SimConfigError> {
    let mut world = World::new(cfg)?;
    world.run();
    let report = world.report();
    Ok(SimOutput {
        trace: world.trace,
        report,
    })
}

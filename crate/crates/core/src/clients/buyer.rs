use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    post_review, select_seller, Action, DataSpec, DataVerifier, DemandBroadcast, ExchangeInfo,
    Outcome, SellerReply, StepLog,
};
use crate::attestation::verify_report;
use crate::chain::{ChainState, SignedTransaction};
use crate::crypto::{decrypt_chunk, decrypt_chunked, DataKey, Hash256, KeyPair, PublicKey};
use crate::net::{Message, OpenTradeRequest};
use crate::spv::{build_evidence, PaymentEvidence};
use crate::types::{Amount, Endpoint, TradeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuyerBehavior {
    Honest,
    /// Colludes with a miner: submits payment evidence as soon as the
    /// payment is mined, hoping the exchange accepts it before a reorg.
    SubmitEarly,
}

pub struct BuyerConfig {
    pub key: KeyPair,
    pub endpoint: Endpoint,
    /// Node that receives this buyer's transactions.
    pub node: Endpoint,
    /// Where the demand is broadcast.
    pub peers: Vec<Endpoint>,
    pub spec: DataSpec,
    pub price: Amount,
    pub exchanges: Vec<ExchangeInfo>,
    pub root_key: PublicKey,
    pub confirm_depth: u64,
    pub service_fee: Amount,
    pub verifier: Arc<dyn DataVerifier>,
    pub reply_window_ms: u64,
    pub wait_timeout_ms: u64,
    /// Resubmissions allowed after a transient rejection.
    pub max_retries: u32,
    pub behavior: BuyerBehavior,
    /// Stop acting on reaching this step.
    pub halt_at: Option<u8>,
    pub seed: [u8; 32],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Idle,
    Collecting,
    Negotiating,
    Attesting,
    FeesPending,
    Opening,
    AwaitSample,
    PaymentPending,
    AwaitData,
    Done,
}

impl Stage {
    /// Step at which the trade is abandoned if this stage times out.
    fn abort_step(self) -> u8 {
        match self {
            Stage::Idle | Stage::Collecting | Stage::Negotiating | Stage::Attesting => 1,
            Stage::FeesPending => 3,
            Stage::Opening => 4,
            Stage::AwaitSample => 10,
            Stage::PaymentPending => 12,
            Stage::AwaitData | Stage::Done => 13,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PerExchange {
    challenge: Option<[u8; 32]>,
    attested: bool,
    fee_tx: Option<Hash256>,
    fee_evidence: Option<PaymentEvidence>,
    trade_id: Option<TradeId>,
    open_pending_retry: bool,
    open_retries: u32,
    payment_pending_retry: bool,
    payment_retries: u32,
    payment_refused: bool,
}

/// The buyer's side of one trade, from demand broadcast to review.
pub struct BuyerSession {
    cfg: BuyerConfig,
    rng: ChaCha20Rng,
    stage: Stage,
    outcome: Outcome,
    halted: bool,
    steps: StepLog,
    progress: u64,
    replies: Vec<SellerReply>,
    seller: Option<SellerReply>,
    exchanges: Vec<PerExchange>,
    data_key: DataKey,
    next_nonce: Option<u64>,
    payment_tx: Option<Hash256>,
    payment_evidence: Option<PaymentEvidence>,
    sample: Option<Vec<u8>>,
    data: Option<Vec<u8>>,
    fake_evidence: Option<PaymentEvidence>,
    cheat_probe: bool,
    reviews: Vec<SignedTransaction>,
}

impl BuyerSession {
    pub fn new(cfg: BuyerConfig) -> Self {
        let mut rng = ChaCha20Rng::from_seed(cfg.seed);
        let data_key = DataKey::random(&mut rng);
        let exchanges = vec![PerExchange::default(); cfg.exchanges.len()];
        BuyerSession {
            cfg,
            rng,
            stage: Stage::Idle,
            outcome: Outcome::InProgress,
            halted: false,
            steps: StepLog::default(),
            progress: 0,
            replies: Vec::new(),
            seller: None,
            exchanges,
            data_key,
            next_nonce: None,
            payment_tx: None,
            payment_evidence: None,
            sample: None,
            data: None,
            fake_evidence: None,
            cheat_probe: false,
            reviews: Vec::new(),
        }
    }

    pub fn address(&self) -> crate::crypto::Address {
        self.cfg.key.address()
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.cfg.endpoint
    }

    pub fn price(&self) -> Amount {
        self.cfg.price
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn steps(&self) -> &StepLog {
        &self.steps
    }

    pub fn seller(&self) -> Option<&SellerReply> {
        self.seller.as_ref()
    }

    pub fn trade_ids(&self) -> Vec<(String, TradeId)> {
        self.cfg
            .exchanges
            .iter()
            .zip(&self.exchanges)
            .filter_map(|(info, st)| st.trade_id.map(|id| (info.id.clone(), id)))
            .collect()
    }

    pub fn data_key(&self) -> &DataKey {
        &self.data_key
    }

    /// Plaintext of the sample chunk, once one passed decryption.
    pub fn sample(&self) -> Option<&[u8]> {
        self.sample.as_deref()
    }

    /// Full plaintext obtained from any release, whatever the session state.
    pub fn obtained_data(&self) -> Option<&[u8]> {
        self.data.as_deref()
    }

    pub fn payment_tx(&self) -> Option<Hash256> {
        self.payment_tx
    }

    pub fn payment_evidence(&self) -> Option<&PaymentEvidence> {
        self.payment_evidence.as_ref()
    }

    pub fn fee_evidence(&self) -> Vec<PaymentEvidence> {
        self.exchanges.iter().filter_map(|e| e.fee_evidence.clone()).collect()
    }

    pub fn attempted_cheat(&self) -> bool {
        self.cheat_probe
    }

    pub fn reviews(&self) -> &[SignedTransaction] {
        &self.reviews
    }

    /// True while the session sits between sample acceptance and payment.
    pub fn ready_to_pay(&self) -> bool {
        self.stage == Stage::AwaitSample && self.sample.is_some()
    }

    /// Replaces the step-11 payment with pre-built evidence. Used by
    /// adversarial scenarios where the buyer presents a forged payment.
    pub fn inject_fake_payment(&mut self, ev: PaymentEvidence) {
        self.fake_evidence = Some(ev);
    }

    fn exchange_index(&self, from: &Endpoint) -> Option<usize> {
        self.cfg.exchanges.iter().position(|e| &e.endpoint == from)
    }

    fn touch(&mut self, out: &mut Vec<Action>) {
        self.progress += 1;
        out.push(Action::Timer {
            after_ms: self.cfg.wait_timeout_ms,
            token: self.progress,
        });
    }

    /// Records arrival at `step`; false if the buyer halts here.
    fn reach(&mut self, step: u8, now: u64, out: &mut Vec<Action>) -> bool {
        if self.halted || self.outcome.is_terminal() {
            return false;
        }
        if self.cfg.halt_at.is_some_and(|h| step >= h) {
            self.halted = true;
            self.outcome = Outcome::AbortedAtStep(step);
            if step == 11 || step == 12 {
                self.cheat(out);
            }
            return false;
        }
        self.steps.push(step, now);
        self.touch(out);
        true
    }

    /// A buyer who stops short of paying tries its luck with the fee
    /// evidence it already holds.
    fn cheat(&mut self, out: &mut Vec<Action>) {
        if self.sample.is_none() {
            return;
        }
        for (info, st) in self.cfg.exchanges.iter().zip(&self.exchanges) {
            if let (Some(id), Some(ev)) = (st.trade_id, st.fee_evidence.clone()) {
                self.cheat_probe = true;
                out.push(Action::Send {
                    to: info.endpoint.clone(),
                    msg: Message::PaymentEvidence { id, evidence: ev },
                });
            }
        }
    }

    fn abort(&mut self, step: u8, reason: &str, out: &mut Vec<Action>) {
        if self.outcome.is_terminal() {
            return;
        }
        self.outcome = Outcome::AbortedAtStep(step);
        self.stage = Stage::Done;
        if let Some(s) = &self.seller {
            out.push(Action::Send {
                to: s.seller_endpoint.clone(),
                msg: Message::Abort {
                    step,
                    reason: reason.to_string(),
                },
            });
        }
    }

    fn active(&self) -> bool {
        !self.halted && !self.outcome.is_terminal()
    }

    fn submit(&mut self, tx: SignedTransaction, out: &mut Vec<Action>) {
        out.push(Action::Send {
            to: self.cfg.node.clone(),
            msg: Message::Tx(tx),
        });
    }

    fn take_nonce(&mut self, chain: &ChainState) -> u64 {
        let n = self
            .next_nonce
            .unwrap_or_else(|| chain.next_nonce(&self.cfg.key.address()));
        self.next_nonce = Some(n + 1);
        n
    }

    /// Step 1 of matching: broadcast the demand.
    pub fn start(&mut self, _now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        if self.stage != Stage::Idle {
            return out;
        }
        let demand = DemandBroadcast {
            spec: self.cfg.spec.clone(),
            price: self.cfg.price,
            buyer_endpoint: self.cfg.endpoint.clone(),
        };
        for p in &self.cfg.peers {
            out.push(Action::Send {
                to: p.clone(),
                msg: Message::Demand(demand.clone()),
            });
        }
        self.stage = Stage::Collecting;
        self.progress += 1;
        out.push(Action::Timer {
            after_ms: self.cfg.reply_window_ms,
            token: self.progress,
        });
        out
    }

    /// Sends a Select to the best remaining candidate, or gives up.
    fn propose(&mut self, chain: &ChainState, out: &mut Vec<Action>) {
        let Ok(choice) = select_seller(&self.replies, chain) else {
            self.outcome = Outcome::NoMatch;
            self.stage = Stage::Done;
            return;
        };
        out.push(Action::Send {
            to: choice.seller_endpoint.clone(),
            msg: Message::Select {
                buyer: self.cfg.key.address(),
                buyer_endpoint: self.cfg.endpoint.clone(),
                price: self.cfg.price,
                exchanges: self.cfg.exchanges.iter().map(|e| e.id.clone()).collect(),
            },
        });
        self.seller = Some(choice);
        self.stage = Stage::Negotiating;
        self.touch(out);
    }

    fn drop_candidate(&mut self) {
        if let Some(s) = self.seller.take() {
            self.replies.retain(|r| r != &s);
        }
    }

    pub fn on_timer(&mut self, token: u64, chain: &ChainState, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        if token != self.progress || !self.active() {
            return out;
        }
        match self.stage {
            Stage::Collecting => self.propose(chain, &mut out),
            Stage::Negotiating => {
                // Silent seller (busy or gone): try the next best one.
                self.drop_candidate();
                self.propose(chain, &mut out);
            }
            stage => {
                let _ = now;
                self.abort(stage.abort_step(), "timed out", &mut out);
            }
        }
        out
    }

    pub fn on_message(&mut self, from: &Endpoint, msg: Message, chain: &ChainState, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        // Released data is always decrypted, even by a halted buyer: the
        // audit needs to know what it could read.
        if let Message::DataRelease { id, chunks } = &msg {
            self.on_release(from, *id, chunks, chain, now, &mut out);
            return out;
        }
        if !self.active() {
            return out;
        }
        match msg {
            Message::Reply(r) if self.stage == Stage::Collecting => {
                if !self.replies.contains(&r) {
                    self.replies.push(r);
                }
            }
            Message::Accept { accepted, exchanges } if self.stage == Stage::Negotiating => {
                if self.seller.as_ref().map(|s| &s.seller_endpoint) != Some(from) {
                    return out;
                }
                let ours: Vec<_> = self.cfg.exchanges.iter().map(|e| e.id.clone()).collect();
                if !accepted || exchanges != ours {
                    self.drop_candidate();
                    self.propose(chain, &mut out);
                    return out;
                }
                if !self.reach(1, now, &mut out) {
                    return out;
                }
                self.stage = Stage::Attesting;
                for i in 0..self.exchanges.len() {
                    let challenge: [u8; 32] = self.rng.gen();
                    self.exchanges[i].challenge = Some(challenge);
                    out.push(Action::Send {
                        to: self.cfg.exchanges[i].endpoint.clone(),
                        msg: Message::AttestRequest { challenge },
                    });
                }
            }
            Message::AttestResponse(report) if self.stage == Stage::Attesting => {
                let Some(i) = self.exchange_index(from) else {
                    return out;
                };
                let Some(challenge) = self.exchanges[i].challenge else {
                    return out;
                };
                let info = &self.cfg.exchanges[i];
                if !verify_report(&report, &info.measurement, &self.cfg.root_key, &challenge) {
                    self.abort(1, "attestation failed", &mut out);
                    return out;
                }
                self.exchanges[i].attested = true;
                if self.exchanges.iter().all(|e| e.attested) {
                    self.pay_fees(chain, now, &mut out);
                }
            }
            Message::TradeOpened { id } if self.stage == Stage::Opening => {
                let Some(i) = self.exchange_index(from) else {
                    return out;
                };
                self.exchanges[i].trade_id = Some(id);
                self.exchanges[i].open_pending_retry = false;
                if self.exchanges.iter().all(|e| e.trade_id.is_some()) {
                    if !self.reach(4, now, &mut out) {
                        return out;
                    }
                    if !self.reach(5, now, &mut out) {
                        return out;
                    }
                    let seller = self.seller.clone().expect("seller chosen before trading");
                    out.push(Action::Send {
                        to: seller.seller_endpoint,
                        msg: Message::TradeInit {
                            trades: self.trade_ids(),
                            key: self.data_key,
                        },
                    });
                    self.stage = Stage::AwaitSample;
                }
            }
            Message::OpenRejected(code) if self.stage == Stage::Opening => {
                let Some(i) = self.exchange_index(from) else {
                    return out;
                };
                let st = &mut self.exchanges[i];
                if code.is_transient() && st.open_retries < self.cfg.max_retries {
                    st.open_pending_retry = true;
                } else {
                    self.abort(4, "exchange refused service", &mut out);
                }
            }
            Message::Sample { id, chunk } if self.stage == Stage::AwaitSample && self.sample.is_none() => {
                if !self.trade_ids().iter().any(|(_, t)| *t == id) || chunk.index != 0 {
                    return out;
                }
                let plain = decrypt_chunk(&self.data_key, &chunk, &id);
                let ok = plain.as_deref().is_ok_and(|p| self.cfg.verifier.sample_ok(p));
                if !ok {
                    if self.reach(10, now, &mut out) {
                        self.abort(10, "sample does not match", &mut out);
                    }
                    return out;
                }
                self.sample = plain.ok();
                if !self.reach(10, now, &mut out) {
                    return out;
                }
                self.pay_seller(chain, now, &mut out);
            }
            Message::PaymentRejected { id, code } if self.stage == Stage::AwaitData => {
                let Some(i) = self.exchange_index(from) else {
                    return out;
                };
                if self.exchanges[i].trade_id != Some(id) {
                    return out;
                }
                let st = &mut self.exchanges[i];
                if code.is_transient() && st.payment_retries < self.cfg.max_retries {
                    st.payment_pending_retry = true;
                } else {
                    st.payment_refused = true;
                    if self.exchanges.iter().all(|e| e.payment_refused) {
                        self.abort(13, "payment evidence refused", &mut out);
                    }
                }
            }
            Message::Abort { step, .. }
                if self.seller.as_ref().is_some_and(|s| &s.seller_endpoint == from) => {
                    self.outcome = Outcome::AbortedAtStep(step);
                    self.stage = Stage::Done;
                }
            _ => {}
        }
        out
    }

    fn pay_fees(&mut self, chain: &ChainState, now: u64, out: &mut Vec<Action>) {
        if !self.reach(2, now, out) {
            return;
        }
        for i in 0..self.exchanges.len() {
            let nonce = self.take_nonce(chain);
            let tx = SignedTransaction::payment(
                &self.cfg.key,
                self.cfg.exchanges[i].owner,
                self.cfg.service_fee,
                nonce,
            );
            self.exchanges[i].fee_tx = Some(tx.tx.tx_hash());
            self.submit(tx, out);
        }
        self.stage = Stage::FeesPending;
    }

    fn pay_seller(&mut self, chain: &ChainState, now: u64, out: &mut Vec<Action>) {
        if let Some(ev) = self.fake_evidence.clone() {
            // Forged payment: the "payment" lives only on the fake chain.
            if !self.reach(11, now, out) {
                return;
            }
            self.payment_evidence = Some(ev);
            self.stage = Stage::PaymentPending;
            self.send_payment_evidence(now, out);
            return;
        }
        if !self.reach(11, now, out) {
            return;
        }
        let seller = self.seller.clone().expect("seller chosen before trading");
        let nonce = self.take_nonce(chain);
        let tx = SignedTransaction::payment(&self.cfg.key, seller.seller, self.cfg.price, nonce);
        self.payment_tx = Some(tx.tx.tx_hash());
        self.submit(tx, out);
        self.stage = Stage::PaymentPending;
        self.on_block(chain, now).into_iter().for_each(|a| out.push(a));
    }

    fn send_payment_evidence(&mut self, now: u64, out: &mut Vec<Action>) {
        if self.stage == Stage::PaymentPending && !self.reach(12, now, out) {
            return;
        }
        self.stage = Stage::AwaitData;
        let ev = self.payment_evidence.clone().expect("evidence built");
        for (info, st) in self.cfg.exchanges.iter().zip(self.exchanges.iter_mut()) {
            if let Some(id) = st.trade_id {
                st.payment_pending_retry = false;
                out.push(Action::Send {
                    to: info.endpoint.clone(),
                    msg: Message::PaymentEvidence {
                        id,
                        evidence: ev.clone(),
                    },
                });
            }
        }
    }

    fn depth_ok(&self, depth: u64) -> bool {
        match self.cfg.behavior {
            BuyerBehavior::Honest => depth >= self.cfg.confirm_depth,
            BuyerBehavior::SubmitEarly => true,
        }
    }

    /// Called whenever the buyer's chain view changes.
    pub fn on_block(&mut self, chain: &ChainState, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        if !self.active() {
            return out;
        }
        match self.stage {
            Stage::FeesPending => {
                let k = self.cfg.confirm_depth;
                let all_deep = self.exchanges.iter().all(|e| {
                    e.fee_tx
                        .and_then(|h| chain.confirmations(&h))
                        .is_some_and(|d| d >= k)
                });
                if !all_deep {
                    return out;
                }
                for e in &mut self.exchanges {
                    let h = e.fee_tx.expect("fee paid");
                    e.fee_evidence = build_evidence(chain, &h).ok();
                }
                if !self.reach(3, now, &mut out) {
                    return out;
                }
                self.stage = Stage::Opening;
                for i in 0..self.exchanges.len() {
                    self.send_open(i, &mut out);
                }
            }
            Stage::Opening => {
                for i in 0..self.exchanges.len() {
                    if self.exchanges[i].open_pending_retry {
                        if let Some(h) = self.exchanges[i].fee_tx {
                            if let Ok(ev) = build_evidence(chain, &h) {
                                self.exchanges[i].fee_evidence = Some(ev);
                            }
                        }
                        self.exchanges[i].open_pending_retry = false;
                        self.exchanges[i].open_retries += 1;
                        self.send_open(i, &mut out);
                    }
                }
            }
            Stage::PaymentPending => {
                let Some(h) = self.payment_tx else {
                    return out;
                };
                let Some(depth) = chain.confirmations(&h) else {
                    return out;
                };
                if !self.depth_ok(depth) {
                    return out;
                }
                self.payment_evidence = build_evidence(chain, &h).ok();
                if self.payment_evidence.is_some() {
                    self.send_payment_evidence(now, &mut out);
                }
            }
            Stage::AwaitData => {
                if let Some(h) = self.payment_tx {
                    if let Ok(ev) = build_evidence(chain, &h) {
                        self.payment_evidence = Some(ev);
                    }
                }
                let Some(ev) = self.payment_evidence.clone() else {
                    return out;
                };
                for (info, st) in self.cfg.exchanges.iter().zip(self.exchanges.iter_mut()) {
                    if st.payment_pending_retry {
                        st.payment_pending_retry = false;
                        st.payment_retries += 1;
                        out.push(Action::Send {
                            to: info.endpoint.clone(),
                            msg: Message::PaymentEvidence {
                                id: st.trade_id.expect("trade opened"),
                                evidence: ev.clone(),
                            },
                        });
                    }
                }
            }
            _ => {}
        }
        out
    }

    fn send_open(&mut self, i: usize, out: &mut Vec<Action>) {
        let seller = self.seller.clone().expect("seller chosen before trading");
        let Some(ev) = self.exchanges[i].fee_evidence.clone() else {
            return;
        };
        out.push(Action::Send {
            to: self.cfg.exchanges[i].endpoint.clone(),
            msg: Message::OpenTrade(OpenTradeRequest {
                service_evidence: ev,
                price: self.cfg.price,
                buyer: self.cfg.key.address(),
                seller: seller.seller,
                buyer_endpoint: self.cfg.endpoint.clone(),
            }),
        });
    }

    fn on_release(
        &mut self,
        from: &Endpoint,
        id: TradeId,
        chunks: &[crate::crypto::CipherChunk],
        chain: &ChainState,
        now: u64,
        out: &mut Vec<Action>,
    ) {
        let Some(i) = self.exchange_index(from) else {
            return;
        };
        if self.exchanges[i].trade_id != Some(id) || self.data.is_some() {
            return;
        }
        let Ok(plain) = decrypt_chunked(&self.data_key, chunks, &id) else {
            return;
        };
        self.data = Some(plain);
        if !self.active() || self.stage != Stage::AwaitData {
            return;
        }
        if !self.reach(13, now, out) {
            return;
        }
        let good = self.cfg.verifier.full_ok(self.data.as_deref().unwrap_or_default());
        if !self.reach(14, now, out) {
            return;
        }
        let seller = self.seller.clone().expect("seller chosen before trading");
        let rating = if good { 5 } else { 1 };
        let mut reviews = Vec::new();
        if let Ok(r) = post_review(chain, &self.cfg.key, seller.seller, rating, b"data quality") {
            reviews.push(r);
        }
        let owner = self.cfg.exchanges[i].owner;
        if let Ok(r) = post_review(chain, &self.cfg.key, owner, 5, b"exchange service") {
            reviews.push(r);
        }
        for r in reviews {
            self.reviews.push(r.clone());
            self.submit(r, out);
        }
        self.outcome = if good { Outcome::Completed } else { Outcome::Defrauded };
        self.stage = Stage::Done;
    }
}

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{Action, ExchangeInfo, Listing, Outcome, StepLog};
use crate::attestation::verify_report;
use crate::crypto::{encrypt_chunked, Address, DataKey, KeyPair, PublicKey};
use crate::net::Message;
use crate::types::{Amount, Endpoint, TradeId};

pub struct SellerConfig {
    pub key: KeyPair,
    pub endpoint: Endpoint,
    pub listing: Listing,
    pub data: Arc<Vec<u8>>,
    /// Exchanges published in the network config.
    pub known_exchanges: Vec<ExchangeInfo>,
    pub root_key: PublicKey,
    pub wait_timeout_ms: u64,
    pub halt_at: Option<u8>,
    /// Deposit random bytes instead of the advertised data.
    pub fake_data: bool,
    pub seed: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Agreement {
    buyer: Address,
    buyer_endpoint: Endpoint,
    price: Amount,
    exchanges: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Listening,
    Agreed,
    Attesting,
    CheckingParams,
    Depositing,
    Done,
}

#[derive(Debug, Clone)]
struct Venue {
    info: ExchangeInfo,
    trade_id: TradeId,
    challenge: [u8; 32],
    attested: bool,
    params_ok: bool,
    acked: bool,
}

/// The seller's side of one trade.
pub struct SellerSession {
    cfg: SellerConfig,
    rng: ChaCha20Rng,
    stage: Stage,
    outcome: Outcome,
    halted: bool,
    steps: StepLog,
    progress: u64,
    agreement: Option<Agreement>,
    key: Option<DataKey>,
    venues: Vec<Venue>,
}

impl SellerSession {
    pub fn new(cfg: SellerConfig) -> Self {
        let rng = ChaCha20Rng::from_seed(cfg.seed);
        SellerSession {
            cfg,
            rng,
            stage: Stage::Listening,
            outcome: Outcome::InProgress,
            halted: false,
            steps: StepLog::default(),
            progress: 0,
            agreement: None,
            key: None,
            venues: Vec::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.cfg.key.address()
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.cfg.endpoint
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

    pub fn data(&self) -> &Arc<Vec<u8>> {
        &self.cfg.data
    }

    pub fn is_faking(&self) -> bool {
        self.cfg.fake_data
    }

    /// Whether a buyer has committed to this seller.
    pub fn engaged(&self) -> bool {
        self.agreement.is_some()
    }

    /// Buyer this seller agreed to trade with.
    pub fn buyer_endpoint(&self) -> Option<&Endpoint> {
        self.agreement.as_ref().map(|a| &a.buyer_endpoint)
    }

    /// Exchanges that acknowledged the ciphertext deposit.
    pub fn deposited_at(&self) -> Vec<String> {
        self.venues
            .iter()
            .filter(|v| v.acked)
            .map(|v| v.info.id.clone())
            .collect()
    }

    fn touch(&mut self, out: &mut Vec<Action>) {
        self.progress += 1;
        out.push(Action::Timer {
            after_ms: self.cfg.wait_timeout_ms,
            token: self.progress,
        });
    }

    fn reach(&mut self, step: u8, now: u64, out: &mut Vec<Action>) -> bool {
        if self.halted || self.outcome.is_terminal() {
            return false;
        }
        if self.cfg.halt_at.is_some_and(|h| step >= h) {
            self.halted = true;
            self.outcome = Outcome::AbortedAtStep(step);
            return false;
        }
        self.steps.push(step, now);
        self.touch(out);
        true
    }

    fn abort(&mut self, step: u8, reason: &str, out: &mut Vec<Action>) {
        if self.outcome.is_terminal() {
            return;
        }
        self.outcome = Outcome::AbortedAtStep(step);
        self.stage = Stage::Done;
        if let Some(a) = &self.agreement {
            out.push(Action::Send {
                to: a.buyer_endpoint.clone(),
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

    fn venue_index(&self, from: &Endpoint) -> Option<usize> {
        self.venues.iter().position(|v| &v.info.endpoint == from)
    }

    pub fn on_timer(&mut self, token: u64, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        if token != self.progress || !self.active() {
            return out;
        }
        let _ = now;
        let step = match self.stage {
            Stage::Listening | Stage::Agreed => return out,
            Stage::Attesting => 6,
            Stage::CheckingParams => 7,
            Stage::Depositing | Stage::Done => 8,
        };
        self.abort(step, "timed out", &mut out);
        out
    }

    pub fn on_message(&mut self, from: &Endpoint, msg: Message, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        if !self.active() {
            return out;
        }
        match msg {
            Message::Demand(d) if self.stage == Stage::Listening => {
                if let Some(reply) = self.cfg.listing.respond(&d) {
                    out.push(Action::Send {
                        to: d.buyer_endpoint,
                        msg: Message::Reply(reply),
                    });
                }
            }
            Message::Select {
                buyer,
                buyer_endpoint,
                price,
                exchanges,
            } if self.stage == Stage::Listening => {
                let known = |id: &String| self.cfg.known_exchanges.iter().any(|e| &e.id == id);
                let accepted = !exchanges.is_empty()
                    && exchanges.iter().all(known)
                    && price >= self.cfg.listing.min_price;
                out.push(Action::Send {
                    to: buyer_endpoint.clone(),
                    msg: Message::Accept {
                        accepted,
                        exchanges: exchanges.clone(),
                    },
                });
                if accepted {
                    self.agreement = Some(Agreement {
                        buyer,
                        buyer_endpoint,
                        price,
                        exchanges,
                    });
                    self.stage = Stage::Agreed;
                }
            }
            Message::TradeInit { trades, key } if self.stage == Stage::Agreed => {
                let agreement = self.agreement.clone().expect("agreed");
                if from != &agreement.buyer_endpoint {
                    return out;
                }
                if !self.reach(6, now, &mut out) {
                    return out;
                }
                let listed: Vec<_> = trades.iter().map(|(ex, _)| ex.clone()).collect();
                if listed != agreement.exchanges {
                    self.abort(6, "exchange list differs from agreement", &mut out);
                    return out;
                }
                self.key = Some(key);
                for (ex, id) in trades {
                    let info = self
                        .cfg
                        .known_exchanges
                        .iter()
                        .find(|e| e.id == ex)
                        .expect("checked at negotiation")
                        .clone();
                    let challenge: [u8; 32] = self.rng.gen();
                    out.push(Action::Send {
                        to: info.endpoint.clone(),
                        msg: Message::AttestRequest { challenge },
                    });
                    self.venues.push(Venue {
                        info,
                        trade_id: id,
                        challenge,
                        attested: false,
                        params_ok: false,
                        acked: false,
                    });
                }
                self.stage = Stage::Attesting;
            }
            Message::AttestResponse(report) if self.stage == Stage::Attesting => {
                let Some(i) = self.venue_index(from) else {
                    return out;
                };
                let v = &self.venues[i];
                if !verify_report(&report, &v.info.measurement, &self.cfg.root_key, &v.challenge) {
                    self.abort(6, "attestation failed", &mut out);
                    return out;
                }
                self.venues[i].attested = true;
                if self.venues.iter().all(|v| v.attested) {
                    if !self.reach(7, now, &mut out) {
                        return out;
                    }
                    self.stage = Stage::CheckingParams;
                    for v in &self.venues {
                        out.push(Action::Send {
                            to: v.info.endpoint.clone(),
                            msg: Message::ParamsRequest { id: v.trade_id },
                        });
                    }
                }
            }
            Message::ParamsResponse { id, params } if self.stage == Stage::CheckingParams => {
                let Some(i) = self.venue_index(from) else {
                    return out;
                };
                let a = self.agreement.clone().expect("agreed");
                let ok = params.is_some_and(|p| {
                    p.id == id
                        && id == self.venues[i].trade_id
                        && p.price == a.price
                        && p.buyer == a.buyer
                        && p.seller == self.cfg.key.address()
                });
                if !ok {
                    self.abort(7, "trade parameters do not match", &mut out);
                    return out;
                }
                self.venues[i].params_ok = true;
                if self.venues.iter().all(|v| v.params_ok) {
                    self.deposit(now, &mut out);
                }
            }
            Message::DepositAck { id, result } if self.stage == Stage::Depositing => {
                let Some(i) = self.venue_index(from) else {
                    return out;
                };
                if self.venues[i].trade_id != id {
                    return out;
                }
                if result.is_some() {
                    self.abort(8, "deposit refused", &mut out);
                    return out;
                }
                self.venues[i].acked = true;
                if self.venues.iter().all(|v| v.acked) {
                    self.outcome = Outcome::Completed;
                    self.stage = Stage::Done;
                }
            }
            Message::Abort { step, .. }
                if self.agreement.as_ref().is_some_and(|a| &a.buyer_endpoint == from) => {
                    self.outcome = Outcome::AbortedAtStep(step);
                    self.stage = Stage::Done;
                }
            _ => {}
        }
        out
    }

    fn deposit(&mut self, now: u64, out: &mut Vec<Action>) {
        if !self.reach(8, now, out) {
            return;
        }
        let key = self.key.expect("key received");
        let payload: Vec<u8> = if self.cfg.fake_data {
            let mut junk = vec![0u8; self.cfg.data.len()];
            self.rng.fill_bytes(&mut junk);
            junk
        } else {
            self.cfg.data.as_ref().clone()
        };
        let mut sends = BTreeMap::new();
        for v in &self.venues {
            let chunks = encrypt_chunked(&key, &payload, &v.trade_id).expect("listing is non-empty");
            sends.insert(v.info.endpoint.clone(), (v.trade_id, chunks));
        }
        for v in &self.venues {
            let (id, chunks) = sends.remove(&v.info.endpoint).expect("built above");
            out.push(Action::Send {
                to: v.info.endpoint.clone(),
                msg: Message::DepositData { id, chunks },
            });
        }
        self.stage = Stage::Depositing;
    }
}

//! Fairness and confidentiality checks run over a finished simulation.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::config::Party;
use super::world::{ActorId, SimReport, World};
use crate::clients::Outcome;
use crate::exchange::{EgressChannel, TradeState};
use crate::net::MessageType;
use crate::types::{Endpoint, TradeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// An enclave released data to a buyer who never paid the seller.
    ReleaseWithoutPayment,
    /// A buyer holds the full plaintext without a confirmed payment.
    DataWithoutPayment,
    /// A chunk left an enclave outside the sample and release paths.
    TaintedEgress,
    /// A buyer reported completion without paying or without the right data.
    UnfairCompletion,
    /// A confirmed payment bought nothing although an honest exchange lives.
    PaidWithoutData,
    /// An honest run failed to finish, or finished too slowly.
    Liveness,
    /// A buyer that aborted by step 10 still paid the seller.
    PaymentAfterAbort,
    /// Recorded steps went backwards or skipped a step.
    StepOrder,
    /// Seller plaintext appeared in a frame.
    PlaintextLeak,
    /// A seller deposited at an exchange that failed attestation.
    TamperedDeposit,
    /// An enclave accepted a header from the fake chain.
    FakeHeaderAccepted,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::ReleaseWithoutPayment => "release_without_payment",
            ViolationKind::DataWithoutPayment => "data_without_payment",
            ViolationKind::TaintedEgress => "tainted_egress",
            ViolationKind::UnfairCompletion => "unfair_completion",
            ViolationKind::PaidWithoutData => "paid_without_data",
            ViolationKind::Liveness => "liveness",
            ViolationKind::PaymentAfterAbort => "payment_after_abort",
            ViolationKind::StepOrder => "step_order",
            ViolationKind::PlaintextLeak => "plaintext_leak",
            ViolationKind::TamperedDeposit => "tampered_deposit",
            ViolationKind::FakeHeaderAccepted => "fake_header_accepted",
        }
    }

    /// Whether the violation breaks buyer- or seller-side fairness, as
    /// opposed to liveness or bookkeeping.
    pub fn is_fairness(self) -> bool {
        !matches!(self, ViolationKind::Liveness | ViolationKind::StepOrder)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub party: Party,
    pub step: u8,
    pub detail: String,
}

fn v(kind: ViolationKind, party: Party, step: u8, detail: impl Into<String>) -> Violation {
    Violation {
        kind,
        party,
        step,
        detail: detail.into(),
    }
}

fn party_of(w: &World<'_>, ep: &Endpoint) -> Party {
    match w.role_of(ep) {
        Some(ActorId::Buyer(_)) => Party::Buyer,
        Some(ActorId::Exchange(_)) => Party::Exchange,
        _ => Party::Seller,
    }
}

pub(super) fn check(w: &World<'_>, r: &SimReport) -> Vec<Violation> {
    let mut out = Vec::new();
    buyer_fairness(w, r, &mut out);
    release_gating(w, &mut out);
    steps(w, r, &mut out);
    liveness(w, r, &mut out);
    for leak in &w.log.leaks {
        out.push(v(
            ViolationKind::PlaintextLeak,
            party_of(w, &leak.from),
            8,
            format!("{} frame {} -> {}", leak.kind.name(), leak.from, leak.to),
        ));
    }
    tampered_deposits(w, &mut out);
    if let Some(f) = &r.fake_chain {
        if !f.all_rejected {
            out.push(v(ViolationKind::FakeHeaderAccepted, Party::Exchange, 5, "fake header accepted"));
        }
    }
    out
}

fn buyer_fairness(w: &World<'_>, r: &SimReport, out: &mut Vec<Violation>) {
    let chain = &w.nodes[0].chain;
    let price = w.cfg.price;
    for (b, rb) in w.buyers.iter().zip(&r.buyers) {
        let paid = rb.paid_to_seller >= price;
        for rel in w.log.releases.iter().filter(|x| x.buyer == rb.endpoint) {
            if !paid {
                out.push(v(
                    ViolationKind::ReleaseWithoutPayment,
                    Party::Buyer,
                    13,
                    format!("{} released trade {} to {}", w.exchanges[rel.exchange].id, rel.trade_id, rb.endpoint),
                ));
            }
        }
        if rb.obtained_data && !paid {
            out.push(v(
                ViolationKind::DataWithoutPayment,
                Party::Buyer,
                13,
                format!("{} holds the data without paying", rb.endpoint),
            ));
        }
        if rb.outcome == Outcome::Completed && !(paid && rb.data_matches) {
            out.push(v(
                ViolationKind::UnfairCompletion,
                Party::Buyer,
                14,
                format!("{} completed with paid={paid} data_matches={}", rb.endpoint, rb.data_matches),
            ));
        }
        if paid && !rb.obtained_data {
            let released = w.log.releases.iter().any(|x| x.buyer == rb.endpoint);
            let honest: Vec<(usize, TradeId)> = rb
                .trade_ids
                .iter()
                .filter_map(|(ex, id)| {
                    let x = w.exchanges.iter().position(|h| &h.id == ex)?;
                    let h = &w.exchanges[x];
                    (h.alive && h.tampered_at.is_none()).then_some((x, *id))
                })
                .collect();
            let holds = honest.iter().any(|(x, id)| {
                matches!(
                    w.exchanges[*x].enclave.trade_state(id),
                    Some(TradeState::DataDeposited) | Some(TradeState::Released)
                )
            });
            if !released && !honest.is_empty() && (!rb.halted || !holds) {
                out.push(v(
                    ViolationKind::PaidWithoutData,
                    Party::Buyer,
                    13,
                    format!("{} paid but cannot obtain the data", rb.endpoint),
                ));
            }
        }
        let aborted_early = match rb.outcome {
            Outcome::AbortedAtStep(s) => s <= 10,
            Outcome::NoMatch => true,
            _ => false,
        };
        if aborted_early {
            if let Some(seller) = rb.seller {
                if !chain.payments_between(&b.key.address(), &seller).is_empty() {
                    let step = match rb.outcome {
                        Outcome::AbortedAtStep(s) => s,
                        _ => 0,
                    };
                    out.push(v(
                        ViolationKind::PaymentAfterAbort,
                        Party::Buyer,
                        step,
                        format!("{} aborted at {step} yet paid the seller", rb.endpoint),
                    ));
                }
            }
        }
    }
}

/// Every chunk frame an exchange sent must match its enclave's egress log,
/// samples must be chunk 0, and releases must follow a Released transition.
fn release_gating(w: &World<'_>, out: &mut Vec<Violation>) {
    for (x, host) in w.exchanges.iter().enumerate() {
        let egress: Vec<_> = host.retired_egress.iter().chain(host.enclave.egress_log()).collect();
        let released: BTreeSet<TradeId> = host
            .retired_transitions
            .iter()
            .chain(host.enclave.transition_log())
            .filter(|(_, _, to)| *to == TradeState::Released)
            .map(|(id, _, _)| *id)
            .collect();
        let mut budget: BTreeMap<(TradeId, u32, bool), usize> = BTreeMap::new();
        for e in &egress {
            let is_sample = e.channel == EgressChannel::Sample;
            if is_sample && e.chunk_index != 0 {
                out.push(v(
                    ViolationKind::TaintedEgress,
                    Party::Exchange,
                    9,
                    format!("{} sampled chunk {}", host.id, e.chunk_index),
                ));
            }
            if !is_sample && !released.contains(&e.trade_id) {
                out.push(v(
                    ViolationKind::TaintedEgress,
                    Party::Exchange,
                    13,
                    format!("{} released trade {} without a Released transition", host.id, e.trade_id),
                ));
            }
            *budget.entry((e.trade_id, e.chunk_index, is_sample)).or_default() += 1;
        }
        for f in w.log.chunk_frames.iter().filter(|f| f.exchange == x) {
            let is_sample = f.kind == MessageType::Sample;
            for &i in &f.indices {
                let slot = budget.get_mut(&(f.trade_id, i, is_sample));
                match slot {
                    Some(n) if *n > 0 => *n -= 1,
                    _ => out.push(v(
                        ViolationKind::TaintedEgress,
                        Party::Exchange,
                        if is_sample { 9 } else { 13 },
                        format!("{} sent chunk {i} of {} with no egress record", host.id, f.trade_id),
                    )),
                }
            }
        }
    }
}

fn step_set(entries: &[(u8, u64)]) -> BTreeSet<u8> {
    entries.iter().map(|(s, _)| *s).collect()
}

fn steps(w: &World<'_>, r: &SimReport, out: &mut Vec<Violation>) {
    for rb in &r.buyers {
        if !rb.steps.windows(2).all(|p| p[0].0 < p[1].0) {
            out.push(v(ViolationKind::StepOrder, Party::Buyer, 0, format!("{} steps {:?}", rb.endpoint, rb.steps)));
        }
    }
    for rs in &r.sellers {
        if !rs.steps.windows(2).all(|p| p[0].0 < p[1].0) {
            out.push(v(ViolationKind::StepOrder, Party::Seller, 0, format!("{} steps {:?}", rs.endpoint, rs.steps)));
        }
    }
    for rb in &r.buyers {
        let mut union = step_set(&rb.steps);
        let seller = w
            .sellers
            .iter()
            .find(|s| s.session.buyer_endpoint() == Some(&rb.endpoint));
        let seller_ep = seller.map(|s| s.session.endpoint().clone());
        if let Some(s) = seller {
            union.extend(s.session.steps().steps());
        }
        for h in &w.exchanges {
            for st in &h.steps {
                if st.peer == rb.endpoint || Some(&st.peer) == seller_ep.as_ref() {
                    union.insert(st.step);
                }
            }
        }
        let core: Vec<u8> = union.iter().copied().filter(|s| *s != 15).collect();
        if let Some(gap) = (1..=core.last().copied().unwrap_or(0)).find(|s| !union.contains(s)) {
            out.push(v(
                ViolationKind::StepOrder,
                Party::Buyer,
                gap,
                format!("{} trade skipped step {gap}: {:?}", rb.endpoint, union),
            ));
        }
        if rb.outcome == Outcome::Completed {
            if let Some(missing) = (1..=14).find(|s| !union.contains(s)) {
                out.push(v(
                    ViolationKind::StepOrder,
                    Party::Buyer,
                    missing,
                    format!("{} completed without step {missing}", rb.endpoint),
                ));
            }
            let releasers_alive = w
                .log
                .releases
                .iter()
                .filter(|x| x.buyer == rb.endpoint)
                .any(|x| w.exchanges[x.exchange].alive);
            if releasers_alive && !union.contains(&15) {
                out.push(v(
                    ViolationKind::StepOrder,
                    Party::Exchange,
                    15,
                    format!("{} trade never garbage-collected", rb.endpoint),
                ));
            }
        }
    }
}

fn liveness(w: &World<'_>, r: &SimReport, out: &mut Vec<Violation>) {
    if !w.cfg.adversary.is_benign() || w.cfg.disable_release_gate {
        return;
    }
    let bound = (w.cfg.network.confirm_depth + 4) * w.cfg.block_interval_ms;
    for (b, rb) in w.buyers.iter().zip(&r.buyers) {
        if rb.steps.is_empty() {
            continue;
        }
        if rb.outcome != Outcome::Completed {
            out.push(v(
                ViolationKind::Liveness,
                Party::Buyer,
                b.session.steps().last().unwrap_or(0),
                format!("{} ended {:?}", rb.endpoint, rb.outcome),
            ));
            continue;
        }
        let log = b.session.steps();
        if let (Some(t11), Some(t14)) = (log.time_of(11), log.time_of(14)) {
            if t14 - t11 > bound {
                out.push(v(
                    ViolationKind::Liveness,
                    Party::Buyer,
                    14,
                    format!("{} took {} ms from payment to completion", rb.endpoint, t14 - t11),
                ));
            }
        }
    }
}

fn tampered_deposits(w: &World<'_>, out: &mut Vec<Violation>) {
    for d in &w.log.deposits {
        let Some(tampered) = w.exchanges[d.exchange].tampered_at else {
            continue;
        };
        let attested_at = w
            .sellers
            .iter()
            .find(|s| s.session.endpoint() == &d.seller)
            .and_then(|s| s.session.steps().time_of(6));
        if attested_at.is_some_and(|t| tampered <= t) && d.time >= tampered {
            out.push(v(
                ViolationKind::TamperedDeposit,
                Party::Seller,
                8,
                format!("{} deposited at tampered {}", d.seller, w.exchanges[d.exchange].id),
            ));
        }
    }
}

use std::collections::{BTreeMap, BTreeSet};

use bdtf_core::chain::{mine_block, Allocation, ChainState, NetworkConfig, SignedTransaction, Target};
use bdtf_core::crypto::{Address, KeyPair};
use proptest::prelude::*;

const ACCOUNTS: usize = 4;

#[derive(Debug, Clone)]
enum Op {
    Pay { from: usize, to: usize, amount: u64, nonce_skip: u64, reuse_nonce: bool },
    Review { from: usize, to: usize, rating: u8 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..ACCOUNTS, 0..ACCOUNTS, 0u64..80, 0u64..3, proptest::bool::weighted(0.1))
            .prop_map(|(from, to, amount, nonce_skip, reuse_nonce)| Op::Pay { from, to, amount, nonce_skip, reuse_nonce }),
        1 => (0..ACCOUNTS, 0..ACCOUNTS, 0u8..7).prop_map(|(from, to, rating)| Op::Review { from, to, rating }),
    ]
}

/// Plain model of the ledger rules.
#[derive(Default)]
struct Model {
    balance: BTreeMap<Address, u64>,
    last_nonce: BTreeMap<Address, u64>,
    paid: BTreeSet<(Address, Address)>,
}

fn keys() -> Vec<KeyPair> {
    (0..ACCOUNTS).map(|i| KeyPair::from_seed([i as u8 + 1; 32])).collect()
}

fn genesis(keys: &[KeyPair]) -> NetworkConfig {
    NetworkConfig::new(
        Target::pow2(252),
        keys.iter()
            .map(|k| Allocation { address: k.address(), amount: 100 })
            .collect(),
    )
}

/// Applies ops one block each; returns the chain and how many blocks the
/// model expected to be accepted.
fn play(ops: &[Op]) -> Result<ChainState, TestCaseError> {
    let ks = keys();
    let mut chain = ChainState::new(genesis(&ks));
    let mut m = Model::default();
    for k in &ks {
        m.balance.insert(k.address(), 100);
    }
    let supply = chain.ledger().total_balance();
    let mut review_seq = 0u8;
    for op in ops {
        let (stx, valid) = match *op {
            Op::Pay { from, to, amount, nonce_skip, reuse_nonce } => {
                let (a, b) = (ks[from].address(), ks[to].address());
                let next = m.last_nonce.get(&a).map_or(0, |n| n + 1);
                let nonce = match (reuse_nonce, m.last_nonce.get(&a)) {
                    (true, Some(&last)) => last,
                    _ => next + nonce_skip,
                };
                let ok = amount > 0 && m.balance[&a] >= amount && nonce >= next;
                if ok {
                    *m.balance.get_mut(&a).unwrap() -= amount;
                    *m.balance.get_mut(&b).unwrap() += amount;
                    m.last_nonce.insert(a, nonce);
                    m.paid.insert((a, b));
                }
                (SignedTransaction::payment(&ks[from], b, amount, nonce), ok)
            }
            Op::Review { from, to, rating } => {
                review_seq = review_seq.wrapping_add(1);
                let (a, b) = (ks[from].address(), ks[to].address());
                let ok = (1..=5).contains(&rating) && m.paid.contains(&(a, b));
                (SignedTransaction::review(&ks[from], b, rating, &[review_seq]), ok)
            }
        };
        let tip = chain.tip_header().clone();
        let block = mine_block(&tip, vec![stx], chain.config().target, tip.timestamp + 1).unwrap();
        let got = chain.validate_and_apply(block);
        prop_assert_eq!(got.is_ok(), valid, "{:?} -> {:?}", op, got);
        prop_assert_eq!(chain.ledger().total_balance(), supply);
        for k in &ks {
            prop_assert_eq!(chain.balance(&k.address()), m.balance[&k.address()]);
        }
    }
    Ok(chain)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ledger_follows_model_and_conserves_supply(ops in proptest::collection::vec(op(), 1..40)) {
        let a = play(&ops)?;
        // Same inputs, same chain.
        let b = play(&ops)?;
        prop_assert_eq!(a.tip_hash(), b.tip_hash());
        prop_assert_eq!(a.replay_canonical().unwrap(), a.ledger().clone());
    }
}

//! Toy proof-of-work ledger carrying payments and reviews.
//!
//! Difficulty is fixed per network, there are no block rewards or fees, and
//! all coins come from the genesis allocation table. The canonical chain is
//! the branch with the most cumulative work.

mod block;
mod config;
mod state;
mod tx;

pub use block::{
    merkle_root, mine_block, mine_block_within, Block, BlockHeader, MerkleError, MineError,
    Target, HEADER_LEN,
};
pub use config::{
    Allocation, ConfigError, ExchangeListing, NetworkConfig, DEFAULT_CONFIRM_DEPTH,
    DEFAULT_FIFO_CAPACITY, DEFAULT_SERVICE_FEE, DEFAULT_TRADE_TIMEOUT_SECS, PROGRAM_VERSION,
};
pub use state::{ApplyOutcome, ChainSnapshot, ChainState, LedgerState, RejectReason, ReviewRecord};
pub use tx::{
    PaymentTransaction, ReviewTransaction, SignedTransaction, Transaction, PAYMENT_LEN,
    PAYMENT_TAG, REVIEW_LEN, REVIEW_TAG,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;

    const TARGET: Target = Target([
        0x0f, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff,
        0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff,
        0xff, 0xff,
    ]);

    struct Fixture {
        alice: KeyPair,
        bob: KeyPair,
        carol: KeyPair,
        chain: ChainState,
    }

    fn fixture() -> Fixture {
        let alice = KeyPair::from_seed([1; 32]);
        let bob = KeyPair::from_seed([2; 32]);
        let carol = KeyPair::from_seed([3; 32]);
        let cfg = NetworkConfig::new(
            TARGET,
            vec![
                Allocation {
                    address: alice.address(),
                    amount: 100,
                },
                Allocation {
                    address: bob.address(),
                    amount: 50,
                },
            ],
        );
        Fixture {
            alice,
            bob,
            carol,
            chain: ChainState::new(cfg),
        }
    }

    fn mine_on(chain: &ChainState, parent: &BlockHeader, txs: Vec<SignedTransaction>) -> Block {
        mine_block(parent, txs, chain.config().target, parent.timestamp + 10).unwrap()
    }

    fn extend(chain: &mut ChainState, txs: Vec<SignedTransaction>) -> Block {
        let b = mine_on(chain, &chain.tip_header().clone(), txs);
        chain.validate_and_apply(b.clone()).unwrap();
        b
    }

    #[test]
    fn payment_moves_balance() {
        let mut f = fixture();
        let pay = SignedTransaction::payment(&f.alice, f.bob.address(), 30, 0);
        assert_eq!(extend(&mut f.chain, vec![pay]).header.height, 1);
        assert_eq!(f.chain.balance(&f.alice.address()), 70);
        assert_eq!(f.chain.balance(&f.bob.address()), 80);
        assert_eq!(f.chain.next_nonce(&f.alice.address()), 1);
    }

    #[test]
    fn overspend_rejected() {
        let f = fixture();
        let pay = SignedTransaction::payment(&f.alice, f.bob.address(), 101, 0);
        let b = mine_on(&f.chain, f.chain.tip_header(), vec![pay]);
        let mut chain = f.chain.clone();
        assert_eq!(
            chain.validate_and_apply(b),
            Err(RejectReason::InsufficientFunds { index: 0 })
        );
        assert_eq!(chain.height(), 0);
    }

    #[test]
    fn review_without_payment_rejected() {
        let mut f = fixture();
        let review = SignedTransaction::review(&f.alice, f.carol.address(), 5, b"great");
        let b = mine_on(&f.chain, f.chain.tip_header(), vec![review]);
        let err = f.chain.validate_and_apply(b).unwrap_err();
        assert_eq!(err, RejectReason::UnauthorizedReview { index: 0 });
        assert_eq!(err.code(), "UnauthorizedReview");
    }

    #[test]
    fn review_after_payment_is_visible() {
        let mut f = fixture();
        assert!(f.chain.query_reviews(&f.carol.address()).is_empty());
        extend(
            &mut f.chain,
            vec![SignedTransaction::payment(&f.alice, f.carol.address(), 5, 0)],
        );
        extend(
            &mut f.chain,
            vec![SignedTransaction::review(&f.alice, f.carol.address(), 5, b"fine")],
        );
        let reviews = f.chain.query_reviews(&f.carol.address());
        assert_eq!(reviews.len(), 1);
        assert_eq!(reviews[0].rating, 5);
        assert_eq!(reviews[0].reviewer, f.alice.address());
        assert_eq!(f.chain.mean_rating(&f.carol.address()), 5.0);
    }

    #[test]
    fn duplicate_review_and_bad_rating_rejected() {
        let mut f = fixture();
        extend(
            &mut f.chain,
            vec![SignedTransaction::payment(&f.alice, f.carol.address(), 5, 0)],
        );
        let r = SignedTransaction::review(&f.alice, f.carol.address(), 4, b"x");
        extend(&mut f.chain, vec![r.clone()]);
        let b = mine_on(&f.chain, f.chain.tip_header(), vec![r]);
        assert_eq!(
            f.chain.clone().validate_and_apply(b),
            Err(RejectReason::DuplicateTransaction { index: 0 })
        );
        let bad = SignedTransaction::review(&f.alice, f.carol.address(), 6, b"y");
        let b = mine_on(&f.chain, f.chain.tip_header(), vec![bad]);
        assert_eq!(
            f.chain.validate_and_apply(b),
            Err(RejectReason::InvalidRating { index: 0 })
        );
    }

    #[test]
    fn nonce_must_increase() {
        let mut f = fixture();
        extend(
            &mut f.chain,
            vec![SignedTransaction::payment(&f.alice, f.bob.address(), 1, 3)],
        );
        let replay = SignedTransaction::payment(&f.alice, f.bob.address(), 1, 3);
        let b = mine_on(&f.chain, f.chain.tip_header(), vec![replay]);
        assert_eq!(
            f.chain.validate_and_apply(b),
            Err(RejectReason::BadNonce { index: 0 })
        );
    }

    #[test]
    fn header_checks_have_distinct_reasons() {
        let f = fixture();
        let tip = f.chain.tip_header().clone();
        let good = mine_on(&f.chain, &tip, vec![]);

        let mut unlinked = good.clone();
        unlinked.header.prev_hash = crate::crypto::hash(b"nowhere");
        assert_eq!(
            f.chain.clone().validate_and_apply(unlinked),
            Err(RejectReason::UnknownParent)
        );

        let easy = mine_block(&tip, vec![], Target::MAX, 10).unwrap();
        assert_eq!(
            f.chain.clone().validate_and_apply(easy),
            Err(RejectReason::WrongTarget)
        );

        let mut weak = good.clone();
        while weak.header.meets_target() {
            weak.header.nonce += 1;
        }
        assert_eq!(
            f.chain.clone().validate_and_apply(weak),
            Err(RejectReason::InsufficientWork)
        );

        let pay = SignedTransaction::payment(&f.alice, f.bob.address(), 1, 0);
        let mut wrong_root = mine_on(&f.chain, &tip, vec![pay.clone()]);
        wrong_root.transactions.push(pay);
        assert_eq!(
            f.chain.clone().validate_and_apply(wrong_root),
            Err(RejectReason::BadMerkleRoot)
        );

        let mut chain = f.chain.clone();
        chain.validate_and_apply(good.clone()).unwrap();
        assert_eq!(
            chain.validate_and_apply(good),
            Err(RejectReason::DuplicateBlock)
        );
    }

    #[test]
    fn forged_signature_rejected() {
        let f = fixture();
        let mut pay = SignedTransaction::payment(&f.alice, f.bob.address(), 1, 0);
        if let Transaction::Payment(p) = &mut pay.tx {
            p.amount = 2;
        }
        let b = mine_on(&f.chain, f.chain.tip_header(), vec![pay]);
        assert_eq!(
            f.chain.clone().validate_and_apply(b),
            Err(RejectReason::BadSignature { index: 0 })
        );
    }

    #[test]
    fn heavier_branch_arriving_second_reorganizes() {
        let mut f = fixture();
        let genesis = f.chain.tip_header().clone();
        // Branch A: one block paying bob, plus one review.
        let a1 = mine_on(
            &f.chain,
            &genesis,
            vec![SignedTransaction::payment(&f.alice, f.carol.address(), 10, 0)],
        );
        f.chain.validate_and_apply(a1.clone()).unwrap();
        let a2 = mine_on(
            &f.chain,
            &a1.header,
            vec![SignedTransaction::review(&f.alice, f.carol.address(), 1, b"bad")],
        );
        f.chain.validate_and_apply(a2.clone()).unwrap();
        assert_eq!(f.chain.query_reviews(&f.carol.address()).len(), 1);

        // Branch B spends the same nonce elsewhere and grows longer.
        let b1 = mine_on(
            &f.chain,
            &genesis,
            vec![SignedTransaction::payment(&f.alice, f.bob.address(), 10, 0)],
        );
        assert_eq!(
            f.chain.validate_and_apply(b1.clone()),
            Ok(ApplyOutcome::SideBranch)
        );
        let b2 = mine_on(&f.chain, &b1.header, vec![]);
        // Equal work: first seen keeps the tip.
        assert_eq!(
            f.chain.validate_and_apply(b2.clone()),
            Ok(ApplyOutcome::SideBranch)
        );
        assert_eq!(f.chain.tip_hash(), a2.hash());
        let b3 = mine_on(&f.chain, &b2.header, vec![]);
        assert_eq!(
            f.chain.validate_and_apply(b3.clone()),
            Ok(ApplyOutcome::Reorganized {
                common_height: 0,
                old_tip: a2.hash()
            })
        );

        // Brute-force work comparison over both branch tips.
        let wa = f.chain.cumulative_work(&a2.hash()).unwrap().clone();
        let wb = f.chain.cumulative_work(&b3.hash()).unwrap().clone();
        assert!(wb > wa);
        assert_eq!(f.chain.tip_hash(), b3.hash());
        assert_eq!(f.chain.balance(&f.bob.address()), 60);
        assert_eq!(f.chain.balance(&f.carol.address()), 0);
        assert!(f.chain.query_reviews(&f.carol.address()).is_empty());
        assert!(f.chain.is_canonical(&b1.hash()));
        assert!(!f.chain.is_canonical(&a1.hash()));
        assert_eq!(f.chain.replay_canonical().unwrap(), *f.chain.ledger());
    }

    #[test]
    fn empty_block_commits_zero_root() {
        let mut f = fixture();
        let b = extend(&mut f.chain, vec![]);
        assert_eq!(b.header.merkle_root, crate::crypto::Hash256::ZERO);
    }

    #[test]
    fn select_transactions_skips_invalid() {
        let f = fixture();
        let ok = SignedTransaction::payment(&f.alice, f.bob.address(), 60, 0);
        let overspend = SignedTransaction::payment(&f.alice, f.bob.address(), 60, 1);
        let ok2 = SignedTransaction::payment(&f.bob, f.carol.address(), 5, 0);
        let picked = f.chain.select_transactions(&[ok.clone(), overspend, ok2.clone()], 10);
        assert_eq!(picked, vec![ok, ok2]);
    }
}

use bdtf_core::chain::{mine_block, BlockHeader, NetworkConfig, Target};
use bdtf_core::exchange::{HeaderStore, IngestOutcome};
use bdtf_core::spv::HeaderView;
use proptest::prelude::*;

fn target() -> Target {
    Target::pow2(252)
}

fn genesis() -> BlockHeader {
    NetworkConfig::new(target(), vec![]).genesis_header()
}

/// Builds a random tree of headers. `parents[i]` picks the parent of header
/// `i + 1` among the earlier headers (0 is genesis), so the list is already
/// in a parents-first order.
fn tree(parents: &[usize], target: Target) -> Vec<BlockHeader> {
    let mut all = vec![genesis()];
    for (i, p) in parents.iter().enumerate() {
        let parent = all[p % all.len()].clone();
        let b = mine_block(&parent, vec![], target, parent.timestamp + 1 + i as u64).unwrap();
        all.push(b.header);
    }
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_tip_is_heaviest_first_seen(parents in proptest::collection::vec(0usize..1000, 1..40)) {
        let hs = tree(&parents, target());
        let g = &hs[0];
        let mut store = HeaderStore::new(0, g.hash(), target(), 1000);
        for h in &hs[1..] {
            prop_assert_eq!(store.ingest(h), IngestOutcome::Accepted);
        }
        // Equal targets make work proportional to height; the first header
        // seen at the greatest height wins ties.
        let max_h = hs.iter().map(|h| h.height).max().unwrap();
        let expect = hs[1..].iter().find(|h| h.height == max_h).unwrap();
        prop_assert_eq!(store.best_hash(), expect.hash());
        prop_assert_eq!(store.best_height(), max_h);

        // The best chain walks back through real parents.
        let mut cursor = expect.clone();
        for height in (1..=max_h).rev() {
            let (hash, h) = store.best_header_at(height).unwrap();
            prop_assert_eq!(hash, cursor.hash());
            prop_assert_eq!(h, &cursor);
            if height > 1 {
                cursor = hs.iter().find(|x| x.hash() == cursor.prev_hash).unwrap().clone();
            }
        }
    }

    #[test]
    fn window_never_exceeds_capacity(len in 1usize..60, cap in 1usize..20) {
        let hs = tree(&(0..len).collect::<Vec<_>>(), target());
        let mut store = HeaderStore::new(0, hs[0].hash(), target(), cap);
        for h in &hs[1..] {
            prop_assert_eq!(store.ingest(h), IngestOutcome::Accepted);
            prop_assert!(store.len() <= cap);
        }
        prop_assert_eq!(store.best_hash(), hs[len].hash());
    }
}

#[test]
fn easier_chain_rejected_header_by_header() {
    let fake = tree(&(0..50).collect::<Vec<_>>(), target().easier_by_shift(8));
    let mut store = HeaderStore::new(0, fake[0].hash(), target(), 144);
    for h in &fake[1..] {
        assert_eq!(store.ingest(h), IngestOutcome::RejectedDifficulty);
    }
    assert!(store.is_empty());
}

#[test]
fn chain_below_checkpoint_rejected() {
    let honest = tree(&(0..20).collect::<Vec<_>>(), target());
    let checkpoint = &honest[20];
    let mut store = HeaderStore::new(20, checkpoint.hash(), target(), 144);
    // A valid-difficulty branch forked at genesis never reaches past the
    // checkpoint height without linking to it.
    let mut rival = vec![honest[0].clone()];
    for _ in 0..20 {
        let parent = rival.last().unwrap().clone();
        rival.push(mine_block(&parent, vec![], target(), parent.timestamp + 7).unwrap().header);
    }
    let rival = &rival[1..];
    assert_ne!(rival[19].hash(), checkpoint.hash());
    for h in rival {
        assert_eq!(store.ingest(h), IngestOutcome::RejectedPreCheckpoint);
    }
    assert!(store.is_empty());
}

use bdtf_core::crypto::{hash, hash_pair, Hash256};
use bdtf_core::merkle::{depth, fold, path, root, Side};
use proptest::prelude::*;

/// Node `i` at height `h`, defined top-down: the right child index is
/// clamped to the last node of the level below, which is how an odd level
/// pairs its last node with itself.
fn node(leaves: &[Hash256], h: u32, i: usize) -> Hash256 {
    if h == 0 {
        return leaves[i];
    }
    let below = leaves.len().div_ceil(1 << (h - 1));
    let l = node(leaves, h - 1, 2 * i);
    let r = node(leaves, h - 1, (2 * i + 1).min(below - 1));
    hash_pair(&l, &r)
}

fn oracle_root(leaves: &[Hash256]) -> Hash256 {
    let mut h = 0;
    while leaves.len().div_ceil(1 << h) > 1 {
        h += 1;
    }
    node(leaves, h, 0)
}

fn leaves(n: usize, salt: u64) -> Vec<Hash256> {
    (0..n as u64)
        .map(|i| hash(&[salt.to_le_bytes(), i.to_le_bytes()].concat()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn root_matches_oracle(n in 1usize..200, salt: u64) {
        let l = leaves(n, salt);
        prop_assert_eq!(root(&l).unwrap(), oracle_root(&l));
    }

    #[test]
    fn every_path_folds_to_root(n in 1usize..100, salt: u64) {
        let l = leaves(n, salt);
        let r = root(&l).unwrap();
        for i in 0..n {
            let p = path(&l, i).unwrap();
            prop_assert_eq!(p.len(), depth(n));
            for (level, step) in p.iter().enumerate() {
                let bit = (i >> level) & 1 == 1;
                prop_assert_eq!(step.side, if bit { Side::Left } else { Side::Right });
            }
            prop_assert_eq!(fold(l[i], &p), r);
        }
        prop_assert!(path(&l, n).is_none());
    }

    #[test]
    fn mutated_sibling_breaks_fold(n in 2usize..100, salt: u64, pick: usize, byte: usize, flip in 1u8..=255) {
        let l = leaves(n, salt);
        let r = root(&l).unwrap();
        let i = pick % n;
        let mut p = path(&l, i).unwrap();
        let level = pick % p.len();
        p[level].sibling.0[byte % 32] ^= flip;
        prop_assert_ne!(fold(l[i], &p), r);
    }
}

#[test]
fn empty_and_single() {
    assert_eq!(root(&[]), None);
    let one = leaves(1, 0);
    assert_eq!(root(&one), Some(one[0]));
    assert!(path(&one, 0).unwrap().is_empty());
}

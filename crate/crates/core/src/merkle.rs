//! Binary SHA-256 Merkle tree over transaction leaf hashes.
//!
//! Each level pairs adjacent nodes as `hash(left || right)`. A level with an
//! odd number of nodes pairs its last node with itself. A single leaf is its
//! own root.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_pair, Hash256};

/// Which side of the running hash a sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn to_byte(self) -> u8 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Side> {
        match b {
            0 => Some(Side::Left),
            1 => Some(Side::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub sibling: Hash256,
    pub side: Side,
}

fn next_level(level: &[Hash256]) -> Vec<Hash256> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => hash_pair(l, r),
            [only] => hash_pair(only, only),
            _ => unreachable!(),
        })
        .collect()
}

/// Root of the tree, or `None` for an empty leaf set.
pub fn root(leaves: &[Hash256]) -> Option<Hash256> {
    if leaves.is_empty() {
        return None;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    Some(level[0])
}

/// Authentication path for `leaves[index]`, bottom level first.
pub fn path(leaves: &[Hash256], index: usize) -> Option<Vec<PathStep>> {
    if index >= leaves.len() {
        return None;
    }
    let mut steps = Vec::new();
    let mut level = leaves.to_vec();
    let mut idx = index;
    while level.len() > 1 {
        let step = if idx.is_multiple_of(2) {
            PathStep {
                sibling: *level.get(idx + 1).unwrap_or(&level[idx]),
                side: Side::Right,
            }
        } else {
            PathStep {
                sibling: level[idx - 1],
                side: Side::Left,
            }
        };
        steps.push(step);
        level = next_level(&level);
        idx /= 2;
    }
    Some(steps)
}

/// Folds a leaf hash up an authentication path.
pub fn fold(leaf: Hash256, path: &[PathStep]) -> Hash256 {
    path.iter().fold(leaf, |acc, step| match step.side {
        Side::Left => hash_pair(&step.sibling, &acc),
        Side::Right => hash_pair(&acc, &step.sibling),
    })
}

/// Number of levels above the leaves: ceil(log2(n)).
pub fn depth(leaf_count: usize) -> usize {
    if leaf_count <= 1 {
        0
    } else {
        (usize::BITS - (leaf_count - 1).leading_zeros()) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    fn leaves(n: usize) -> Vec<Hash256> {
        (0..n).map(|i| hash(&(i as u64).to_be_bytes())).collect()
    }

    #[test]
    fn empty_has_no_root() {
        assert_eq!(root(&[]), None);
    }

    #[test]
    fn single_leaf_is_root() {
        let l = leaves(1);
        assert_eq!(root(&l), Some(l[0]));
        assert!(path(&l, 0).unwrap().is_empty());
    }

    #[test]
    fn depth_values() {
        assert_eq!(depth(1), 0);
        assert_eq!(depth(2), 1);
        assert_eq!(depth(3), 2);
        assert_eq!(depth(8), 3);
        assert_eq!(depth(9), 4);
    }

    #[test]
    fn every_path_folds_to_root() {
        for n in 1..40 {
            let l = leaves(n);
            let r = root(&l).unwrap();
            for i in 0..n {
                let p = path(&l, i).unwrap();
                assert_eq!(p.len(), depth(n));
                assert_eq!(fold(l[i], &p), r, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn out_of_range_index() {
        assert!(path(&leaves(3), 3).is_none());
    }
}

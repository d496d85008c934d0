use std::collections::{HashMap, HashSet, VecDeque};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::chain::{BlockHeader, Target};
use crate::crypto::Hash256;
use crate::spv::HeaderView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IngestOutcome {
    Accepted,
    RejectedLinkage,
    RejectedDifficulty,
    RejectedPreCheckpoint,
}

#[derive(Debug, Clone)]
struct StoredHeader {
    header: BlockHeader,
    /// Work accumulated since the checkpoint, this header included.
    work: BigUint,
}

#[derive(Debug, Clone)]
struct Anchor {
    height: u64,
    hash: Hash256,
    work: BigUint,
}

/// Bounded window of validated headers rooted at a hardcoded checkpoint.
///
/// Headers are admitted only if they meet the network target and link to
/// the anchor or to a stored header. When the window is full the oldest
/// header is evicted; if it was on the best chain it becomes the new anchor
/// and anything not descending from it is dropped.
#[derive(Debug, Clone)]
pub struct HeaderStore {
    checkpoint_height: u64,
    checkpoint_hash: Hash256,
    target: Target,
    capacity: usize,
    anchor: Anchor,
    order: VecDeque<Hash256>,
    headers: HashMap<Hash256, StoredHeader>,
    best: Hash256,
}

impl HeaderStore {
    pub fn new(checkpoint_height: u64, checkpoint_hash: Hash256, target: Target, capacity: usize) -> Self {
        assert!(capacity > 0, "header window needs room for at least one header");
        HeaderStore {
            checkpoint_height,
            checkpoint_hash,
            target,
            capacity,
            anchor: Anchor {
                height: checkpoint_height,
                hash: checkpoint_hash,
                work: BigUint::default(),
            },
            order: VecDeque::new(),
            headers: HashMap::new(),
            best: checkpoint_hash,
        }
    }

    pub fn checkpoint(&self) -> (u64, Hash256) {
        (self.checkpoint_height, self.checkpoint_hash)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, hash: &Hash256) -> bool {
        self.headers.contains_key(hash)
    }

    pub fn best_hash(&self) -> Hash256 {
        self.best
    }

    pub fn best_work(&self) -> BigUint {
        self.work_of(&self.best)
    }

    /// Timestamp of the best header; the enclave's notion of "now".
    pub fn best_timestamp(&self) -> Option<u64> {
        self.headers.get(&self.best).map(|s| s.header.timestamp)
    }

    fn work_of(&self, hash: &Hash256) -> BigUint {
        match self.headers.get(hash) {
            Some(s) => s.work.clone(),
            None => self.anchor.work.clone(),
        }
    }

    /// Stored headers in insertion order.
    pub fn headers(&self) -> impl Iterator<Item = &BlockHeader> + '_ {
        self.order.iter().map(move |h| &self.headers[h].header)
    }

    pub fn anchor(&self) -> (u64, Hash256) {
        (self.anchor.height, self.anchor.hash)
    }

    pub fn ingest(&mut self, header: &BlockHeader) -> IngestOutcome {
        if header.difficulty_target != self.target || !header.meets_target() {
            return IngestOutcome::RejectedDifficulty;
        }
        if header.height <= self.checkpoint_height {
            return IngestOutcome::RejectedPreCheckpoint;
        }
        let hash = header.hash();
        if self.headers.contains_key(&hash) {
            return IngestOutcome::Accepted;
        }
        let parent_work = if header.prev_hash == self.anchor.hash {
            if header.height != self.anchor.height + 1 {
                return IngestOutcome::RejectedLinkage;
            }
            self.anchor.work.clone()
        } else {
            match self.headers.get(&header.prev_hash) {
                Some(p) if p.header.height + 1 == header.height => p.work.clone(),
                _ => return IngestOutcome::RejectedLinkage,
            }
        };
        let work = parent_work + header.work();
        let heavier = work > self.best_work();
        self.headers.insert(
            hash,
            StoredHeader {
                header: header.clone(),
                work,
            },
        );
        self.order.push_back(hash);
        if heavier {
            self.best = hash;
        }
        while self.order.len() > self.capacity {
            self.evict_oldest();
        }
        IngestOutcome::Accepted
    }

    fn is_on_best_chain(&self, hash: &Hash256) -> bool {
        let Some(target) = self.headers.get(hash) else {
            return false;
        };
        self.best_header_at(target.header.height)
            .is_some_and(|(h, _)| &h == hash)
    }

    fn evict_oldest(&mut self) {
        let Some(oldest) = self.order.front().copied() else {
            return;
        };
        if self.is_on_best_chain(&oldest) {
            let s = &self.headers[&oldest];
            self.anchor = Anchor {
                height: s.header.height,
                hash: oldest,
                work: s.work.clone(),
            };
        }
        self.order.pop_front();
        self.headers.remove(&oldest);

        // Keep only headers that still descend from the anchor. Parents are
        // always inserted before children, so one forward pass suffices.
        let mut keep: HashSet<Hash256> = HashSet::from([self.anchor.hash]);
        let mut retained = VecDeque::with_capacity(self.order.len());
        for h in self.order.drain(..) {
            if keep.contains(&self.headers[&h].header.prev_hash) {
                keep.insert(h);
                retained.push_back(h);
            } else {
                self.headers.remove(&h);
            }
        }
        self.order = retained;
        if !self.headers.contains_key(&self.best) && self.best != self.anchor.hash {
            self.best = self.anchor.hash;
        }
    }
}

impl HeaderView for HeaderStore {
    fn best_height(&self) -> u64 {
        self.headers
            .get(&self.best)
            .map_or(self.anchor.height, |s| s.header.height)
    }

    fn best_header_at(&self, height: u64) -> Option<(Hash256, &BlockHeader)> {
        let mut cursor = self.best;
        loop {
            let s = self.headers.get(&cursor)?;
            match s.header.height.cmp(&height) {
                std::cmp::Ordering::Equal => return Some((cursor, &s.header)),
                std::cmp::Ordering::Less => return None,
                std::cmp::Ordering::Greater => cursor = s.header.prev_hash,
            }
        }
    }
}

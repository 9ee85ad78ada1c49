//! Deterministic random-stream derivation.
//!
//! Every run owns a single seed; all randomness (splits, weight init,
//! neighbor sampling, synthetic data) flows from named substreams derived
//! by counter-based mixing. Substreams are independent of evaluation
//! order, so e.g. sampling the tree for root 17 at step 4 yields the same
//! draws whether roots are expanded serially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the top-level substreams of a run seed.
pub mod stream {
    /// Stratified train/val/test split.
    pub const SPLIT: u64 = 1;
    /// Weight initialization.
    pub const INIT: u64 = 2;
    /// Neighborhood sampling during training.
    pub const SAMPLER: u64 = 3;
    /// Synthetic dataset generation.
    pub const SYNTH: u64 = 4;
    /// Evaluation-time neighborhood sampling.
    pub const EVAL: u64 = 5;
    /// Per-epoch shuffling of the training set.
    pub const SHUFFLE: u64 = 6;
}

/// Split tags used beneath [`stream::EVAL`].
pub mod split_tag {
    pub const TRAIN: u64 = 1;
    pub const VAL: u64 = 2;
    pub const TEST: u64 = 3;
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A point in the seed tree. `child(tag)` derives a statistically
/// independent subtree; `rng()` expands the point into a full generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(splitmix64(seed))
    }

    pub fn child(self, tag: u64) -> Self {
        StreamSeed(splitmix64(self.0 ^ splitmix64(tag.wrapping_mul(GAMMA))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn children_are_order_independent() {
        let root = StreamSeed::new(42);
        let a = root.child(stream::SAMPLER).child(3).child(7);
        let b = root.child(stream::SAMPLER).child(3).child(7);
        assert_eq!(a, b);
        let mut ra = a.rng();
        let mut rb = b.rng();
        for _ in 0..16 {
            assert_eq!(ra.gen::<u64>(), rb.gen::<u64>());
        }
    }

    #[test]
    fn sibling_streams_differ() {
        let root = StreamSeed::new(42);
        let a = root.child(1).rng().gen::<u64>();
        let b = root.child(2).rng().gen::<u64>();
        assert_ne!(a, b);
    }

    #[test]
    fn tag_and_seed_do_not_collide_trivially() {
        // A child derived with tag t from seed s must not equal the root
        // stream of seed s ^ t or similar cheap collisions.
        let mut seen = std::collections::HashSet::new();
        for seed in 0..32u64 {
            for tag in 0..32u64 {
                seen.insert(StreamSeed::new(seed).child(tag).0);
            }
        }
        assert_eq!(seen.len(), 32 * 32);
    }
}

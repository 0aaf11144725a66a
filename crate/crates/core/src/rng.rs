//! Counter-based stream splitting.
//!
//! Every stochastic draw in the crate is taken from a [`StreamKey`] derived
//! from a master seed plus a path of integer labels (image, window, sample,
//! ...). Derivation is a pure function of the path, so the random numbers a
//! unit of work sees never depend on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator handed out by [`StreamKey::rng`].
pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash, used to turn string ids into stream labels.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A node in the tree of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    state: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        StreamKey { state: mix64(master_seed ^ 0x5151_a5a5_0f0f_3c3c) }
    }

    /// Child stream labelled `label`. Distinct labels give unrelated streams.
    #[must_use]
    pub fn child(self, label: u64) -> Self {
        StreamKey { state: mix64(self.state.wrapping_add(GOLDEN).wrapping_add(mix64(label.wrapping_add(GOLDEN)))) }
    }

    /// Child keyed by a string label.
    #[must_use]
    pub fn named(self, label: &str) -> Self {
        self.child(hash_str(label))
    }

    /// Shorthand for a chain of [`child`](Self::child) calls.
    #[must_use]
    pub fn path(self, labels: &[u64]) -> Self {
        labels.iter().fold(self, |k, &l| k.child(l))
    }

    /// Materialize a generator for this node.
    pub fn rng(self) -> Stream {
        let mut seed = [0u8; 32];
        let mut s = self.state;
        for chunk in seed.chunks_exact_mut(8) {
            s = mix64(s.wrapping_add(GOLDEN));
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// A raw 64-bit value tied to this node, e.g. for recording in a manifest.
    pub fn seed_value(self) -> u64 {
        self.state
    }
}

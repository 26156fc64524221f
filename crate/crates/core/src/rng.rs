//! Seed expansion: one root seed fans out into independent per-purpose
//! ChaCha streams, so enabling one random feature never shifts another's
//! draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams derived from a run's root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stream {
    Init = 1,
    Distortion = 2,
    Sampling = 3,
    Dropout = 4,
    Split = 5,
    Holdout = 6,
    Contrastive = 7,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Generator for `stream`, positioned at the start of its keystream.
    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(stream as u64);
        rng
    }

    /// Generator for the `index`-th sub-stream of `stream` (e.g. one per
    /// epoch). Sub-streams never overlap for distinct indices.
    pub fn rng_at(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(((index + 1) << 8) | stream as u64);
        rng
    }

    /// A single derived 64-bit seed.
    pub fn seed_at(&self, stream: Stream, index: u64) -> u64 {
        use rand::RngCore;
        self.rng_at(stream, index).next_u64()
    }
}

//! Reproducible random streams.
//!
//! Every stream is ChaCha8 keyed by the run seed and addressed by a 64-bit
//! stream id:
//!
//! * key = `seed.to_le_bytes()` followed by 24 zero bytes,
//! * stream (nonce) = the stream id, word position starts at 0,
//! * a unit draw takes the top 53 bits of `next_u64`: `(x >> 11) * 2^-53`.
//!
//! Child streams are addressed with [`SeededRng::derive`], which mixes a tag
//! into the parent stream id with the SplitMix64 finalizer. Sampling derives
//! one stream per (scale, path, token), so the order in which tokens are
//! processed never changes their draws.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

const DERIVE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit hash of a word sequence.
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |acc, &w| mix64(acc.rotate_left(23) ^ mix64(w.wrapping_add(DERIVE_SALT))))
}

/// Address of one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Root stream of a run.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream addressed by `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        Self { seed: self.seed, stream: mix64(self.stream ^ mix64(tag ^ DERIVE_SALT)) }
    }

    pub fn generator(&self) -> StreamGenerator {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(self.stream);
        StreamGenerator { inner }
    }
}

/// Sequential draws from one stream.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    inner: ChaCha8Rng,
}

impl StreamGenerator {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn next_open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard Gumbel draw `-ln(-ln U)`.
    pub fn next_gumbel(&mut self) -> f64 {
        -(-self.next_open_unit().ln()).ln()
    }
}

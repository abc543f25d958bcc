//! Counter-based random streams.
//!
//! Every ray owns a fixed window of a ChaCha8 keystream addressed by
//! `(seed, stream key, ray index)`, so a ray's random numbers never depend on
//! which worker traces it or in what order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 32-bit words reserved per ray.
const WORDS_PER_RAY: u128 = 1 << 10;

/// Word offset inside a ray window where tracing draws start; emission
/// uses the words before it.
const TRACE_WORD_OFFSET: u128 = 16;

#[derive(Clone)]
pub struct StreamFamily {
    base: ChaCha8Rng,
}

impl StreamFamily {
    pub fn new(seed: u64, key: u64) -> Self {
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        base.set_stream(key);
        Self { base }
    }

    /// Draws used to place ray `index` on the aperture.
    pub fn emission(&self, index: u64) -> RayStream {
        self.at(index as u128 * WORDS_PER_RAY)
    }

    /// Draws consumed while tracing ray `index`.
    pub fn tracing(&self, index: u64) -> RayStream {
        self.at(index as u128 * WORDS_PER_RAY + TRACE_WORD_OFFSET)
    }

    fn at(&self, word: u128) -> RayStream {
        let mut rng = self.base.clone();
        rng.set_word_pos(word);
        RayStream { rng }
    }
}

pub struct RayStream {
    rng: ChaCha8Rng,
}

impl RayStream {
    /// Uniform variate in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Stable 64-bit mixing of a sequence of words (SplitMix64 finaliser).
pub fn mix_key(words: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// FNV-1a over a string, used for metadata fingerprints.
pub fn fingerprint(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

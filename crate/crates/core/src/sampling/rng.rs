//! Deterministic, splittable random state.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    mix64(*state)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pseudo-random generator state identified by a `(seed, stream)` pair.
///
/// The seed is expanded into a ChaCha8 key and the stream selects one of
/// 2^64 non-overlapping keystreams, so the output sequence depends only on
/// the pair and is identical on every platform. Sub-streams obtained with
/// [`RandomState::fork`] depend only on the parent's identity, never on how
/// many values the parent has already produced.
#[derive(Clone, Debug)]
pub struct RandomState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RandomState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut sm = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut sm).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            rng,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derives the `k`-th child stream. Children share the parent's key but
    /// use a different keystream, so they never overlap the parent sequence.
    pub fn fork(&self, k: u64) -> Self {
        let mut child = mix64(
            self.stream
                .wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        );
        if child == self.stream {
            child ^= 1;
        }
        Self::with_stream(self.seed, child)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform deviate in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform deviate in the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub(crate) fn take_spare_normal(&mut self) -> Option<f64> {
        self.spare_normal.take()
    }

    pub(crate) fn set_spare_normal(&mut self, z: f64) {
        self.spare_normal = Some(z);
    }
}

/// Next uniform deviate in `[0, 1)`; advances the state.
#[inline]
pub fn uniform_next(state: &mut RandomState) -> f64 {
    state.uniform()
}

//! Counter-based, splittable random streams.
//!
//! A stream is identified by `(master_seed, stream_id)`. The generator behind it is ChaCha8 keyed
//! by the master seed with the ChaCha stream number set to `stream_id`, so the draw index is the
//! block counter. Streams are plain values: copying one and drawing from both copies yields the
//! same sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// SplitMix64 finaliser.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Generator positioned at draw index 0 of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Generator positioned at an arbitrary 32-bit word offset.
    pub fn generator_at(&self, word_pos: u128) -> ChaCha8Rng {
        let mut rng = self.generator();
        rng.set_word_pos(word_pos);
        rng
    }

    /// Child stream for an independent consumer (a component of a trial, a time key, ...).
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: mix64(self.stream_id ^ mix64(tag ^ 0x5851_f42d_4c95_7f2d)),
        }
    }

    pub fn derive_pair(&self, a: u64, b: u64) -> Self {
        self.derive(a).derive(b)
    }
}

/// Fills a fresh vector with i.i.d. standard normal draws.
pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]: a ChaCha8 block
//! generator keyed by the 64-bit master seed, with the 64-bit ChaCha stream
//! selector derived from a path of indices (replicate, year, purpose, ...).
//! ChaCha is counter based, so each stream is a pure function of
//! `(seed, path)` and gives identical output on every platform. Work can be
//! fanned out over replicates in any order without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes under the same path never
/// share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ScaleField = 1,
    BaseField = 2,
    Parameters = 3,
    Weights = 4,
    Shuffle = 5,
    Split = 6,
    Bootstrap = 7,
    Folds = 8,
    Fixture = 9,
    Noise = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the substream tree rooted at a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    seed: u64,
    path: u64,
}

impl Stream {
    pub fn root(seed: u64) -> Self {
        Stream {
            seed,
            path: splitmix64(0x5CA1_E000_0000_0000),
        }
    }

    /// Substream for an index (replicate number, year, fold, ...).
    pub fn child(self, index: u64) -> Self {
        Stream {
            seed: self.seed,
            path: splitmix64(self.path ^ splitmix64(index.wrapping_add(0x1000))),
        }
    }

    pub fn purpose(self, purpose: Purpose) -> Self {
        Stream {
            seed: self.seed,
            path: splitmix64(self.path.rotate_left(17) ^ (purpose as u64)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.path);
        rng
    }
}

//! Counter-addressable Gaussian noise.
//!
//! Every pair of standard normals is a pure function of
//! `(seed, stream, step)`: we run ChaCha8 on a per-stream keystream and
//! address the two `u64` words for a step directly by word position, then
//! map them through Box-Muller. Simulation output is therefore identical
//! no matter how paths are scheduled across workers.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Words of ChaCha output consumed per step (two u64 = four u32 words).
const WORDS_PER_STEP: u128 = 4;

/// Map a u64 to the open interval (0, 1); the half-ulp offset keeps the
/// Box-Muller logarithm finite.
#[inline]
fn to_open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Two independent standard normals from two uniforms.
#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Deterministic source of per-(stream, step) standard-normal pairs.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Derive an unrelated seed for a sub-purpose (e.g. inner Monte Carlo
    /// paths). SplitMix64 finalizer over the combined words.
    pub fn derive(seed: u64, tag: u64) -> u64 {
        let mut z = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(tag)
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Sequential generator for one stream, positioned at step 0.
    pub fn stream(&self, stream: u64) -> NoiseStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        NoiseStream { rng }
    }

    /// Random-access normal pair at `(stream, step)`. Equals what the
    /// sequential stream produces at that step.
    pub fn pair_at(&self, stream: u64, step: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        let u1 = to_open_unit(rng.next_u64());
        let u2 = to_open_unit(rng.next_u64());
        box_muller(u1, u2)
    }
}

/// Sequential view of one noise stream.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    /// Next standard-normal pair; consumes exactly one step.
    #[inline]
    pub fn next_pair(&mut self) -> (f64, f64) {
        let u1 = to_open_unit(self.rng.next_u64());
        let u2 = to_open_unit(self.rng.next_u64());
        box_muller(u1, u2)
    }
}

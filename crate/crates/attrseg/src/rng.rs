//! Seeded randomness helpers. Everything that samples goes through a
//! `ChaCha8Rng` (or the counter-based `SplitMix64` below) so runs are
//! reproducible from a single seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard-normal sample via Box-Muller; avoids depending on the ziggurat
/// tables of external distributions so the byte-level stream is pinned here.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // u1 in (0, 1] so the log is finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Derives an independent stream for a named component of a seeded run.
pub fn derive_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ crate::hash::fnv64(stream.as_bytes()))
}

/// Derives a per-index stream, e.g. one rng per sample or per iteration.
pub fn derive_rng_indexed(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    let mut s = SplitMix64::new(seed ^ crate::hash::fnv64(stream.as_bytes()));
    ChaCha8Rng::seed_from_u64(s.next_u64().wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Counter-based generator used where a full rng is overkill (mock token
/// embeddings). The sequence is a pure function of the seed.
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard-normal via Box-Muller on the uniform stream.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

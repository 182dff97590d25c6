//! Portable counter-based generator used wherever matrices must be
//! reproducible across implementations (eliminator seeds).
//!
//! Output `i` (0-based) for seed `s` is `mix(s + (i + 1)·γ)` with
//! γ = 0x9E3779B97F4A7C15 and `mix` the SplitMix64 finalizer, all in
//! wrapping 64-bit arithmetic. Uniform reals are `(x >> 11)·2⁻⁵³`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Combine a base seed with a list of identifiers into a derived seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(base ^ GOLDEN_GAMMA), |acc, &p| mix64(acc.wrapping_add(p).wrapping_mul(GOLDEN_GAMMA)))
}

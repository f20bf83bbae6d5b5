//! Counter-based pseudo-random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`:
//!
//! ```text
//! key   = mix64(seed ^ mix64(stream + 0x9E3779B97F4A7C15))
//! u64_n = mix64(key + n · 0x9E3779B97F4A7C15)      n = 1, 2, 3, …
//! ```
//!
//! where `mix64` is the SplitMix64 finaliser
//! (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//! z *= 0x94D049BB133111EB; z ^= z >> 31`, wrapping arithmetic).
//! Uniform reals take the top 53 bits: `(u >> 11) · 2⁻⁵³`. Normal
//! variates use Box–Muller on two consecutive uniforms (cosine branch only).
//! Because streams are independent, frames and vessels can be generated in
//! any order and reproduce bit-for-bit.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ mix64(stream.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    /// The `n`-th output of this stream (1-based), without advancing.
    pub fn at(&self, n: u64) -> u64 {
        mix64(self.key.wrapping_add(n.wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.at(self.counter)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.next_u64() % (hi - lo + 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Stream identifiers; the high word names the purpose, the low word an index.
pub(crate) mod stream {
    pub const VESSEL: u64 = 1 << 32;
    pub const TEXTURE: u64 = 2 << 32;
    pub const NOISE: u64 = 3 << 32;
    pub const OCCLUDER: u64 = 4 << 32;
    pub const PAIR: u64 = 5 << 32;
}

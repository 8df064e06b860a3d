//! Seeded generator used everywhere randomness is needed.
//!
//! The generator is SplitMix64 (Steele, Lea, Flood 2014), chosen over a bare
//! LCG for its better equidistribution while staying trivial to re-implement
//! in any language. The exact algorithm, since weight initialization and
//! prompt generation must be reproducible bit-for-bit outside this crate:
//!
//! ```text
//! state := seed
//! next_u64():
//!     state += 0x9E3779B97F4A7C15          (wrapping)
//!     z := state
//!     z := (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (wrapping)
//!     z := (z ^ (z >> 27)) * 0x94D049BB133111EB   (wrapping)
//!     return z ^ (z >> 31)
//! ```
//!
//! `next_f64` maps the top 53 bits onto `[0, 1)` as `(x >> 11) * 2^-53`.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, n)` by modular reduction.
    ///
    /// The modulo bias is ~n/2^64 and irrelevant for the toy vocabulary and
    /// expert counts here; the simple rule is what keeps the stream easy to
    /// reproduce elsewhere.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        self.next_u64() % n
    }
}

/// Derives an independent stream from a base seed and a label.
///
/// Used to give each (model, prompt, run) its own generator without manual
/// seed bookkeeping: feed the label through one SplitMix64 step.
pub fn derive_seed(base: u64, label: u64) -> u64 {
    let mut r = SplitMix64::new(base ^ label.wrapping_mul(0xA076_1D64_78BD_642F));
    r.next_u64()
}

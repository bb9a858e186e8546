//! Deterministic random numbers.
//!
//! Every sampling path in the toolkit (constraint validation, solver
//! restarts, disturbance generation) draws from this one generator so that
//! reports and traces are reproducible bit-for-bit across platforms.
//!
//! The generator is the 64-bit linear congruential recurrence
//!
//! ```text
//! state' = state * 6364136223846793005 + 1442695040888963407   (mod 2^64)
//! ```
//!
//! seeded with `state = seed`. A uniform draw in `[0, 1)` takes the top 53
//! bits of the updated state as the mantissa: `(state' >> 11) * 2^-53`.

/// 64-bit linear congruential generator (see module docs for the exact
/// recurrence; results are identical on every platform).
#[derive(Debug, Clone)]
pub struct Lcg64 {
    state: u64,
}

const MUL: u64 = 6364136223846793005;
const INC: u64 = 1442695040888963407;

impl Lcg64 {
    pub fn new(seed: u64) -> Self {
        Lcg64 { state: seed }
    }

    /// Advances the state and returns it.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(MUL).wrapping_add(INC);
        self.state
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

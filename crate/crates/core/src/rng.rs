//! Platform-independent seedable PRNG.
//!
//! The generator is Marsaglia's xorshift64* (shifts 12, 25, 27; output
//! multiplier `0x2545F4914F6CDD1D`). The 64-bit seed is first scrambled with
//! one SplitMix64 step so that small or zero seeds still give a nonzero state.
//! Bounded draws use Lemire's multiply-shift method with rejection, so the
//! stream of values depends only on the seed and the bound sequence.

#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Xorshift64Star {
            state: if s == 0 { 0x9E37_79B9_7F4A_7C15 } else { s },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform draw from `[0, bound)`; `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let mut m = self.next_u64() as u128 * bound as u128;
        let mut low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            while low < threshold {
                m = self.next_u64() as u128 * bound as u128;
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform draw from the inclusive range `[lo, hi]`.
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo) as u64 + 1) as i64
    }

    /// Uniform `f64` in `[0, 1)`.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

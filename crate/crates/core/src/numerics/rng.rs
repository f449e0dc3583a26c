//! Counter-based random stream.
//!
//! Output `i` is `mix64(seed + (i+1)·GAMMA)` — a splitmix-style finalizer over
//! an affine counter walk. The value at a given `(seed, counter)` never
//! depends on how the stream got there, so derived streams can be consumed in
//! any task order and replayed exactly. All randomness in the crate flows
//! through named child streams of one global seed.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed, a purpose tag and an index.
pub fn mix_seed(parent: u64, tag: &str, index: u64) -> u64 {
    let tagged = mix64(parent ^ fnv1a64(tag.as_bytes()));
    mix64(tagged.wrapping_add(GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Deterministic counter-based random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Child stream for a named purpose; independent of this stream's counter.
    pub fn child(&self, tag: &str, index: u64) -> RngStream {
        RngStream::new(mix_seed(self.seed, tag, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(
            self.seed
                .wrapping_add(GAMMA.wrapping_mul(self.counter.wrapping_add(1))),
        );
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1) with 24 bits of mantissa.
    #[inline]
    pub fn next_uniform(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / 16_777_216.0)
    }

    pub fn next_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform integer in [0, n) via multiply-shift.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index on empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (one draw per call).
    pub fn next_gaussian(&mut self) -> f32 {
        let u1 = ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        let u2 = ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        (((-2.0 * u1.ln()).sqrt()) * (std::f64::consts::TAU * u2).cos()) as f32
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_index(i + 1);
            slice.swap(i, j);
        }
    }
}

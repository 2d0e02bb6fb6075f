//! Portable seeded random stream shared by every randomized stage.
//!
//! The generator is SplitMix64, and every derived operation (unit floats,
//! bounded integers, shuffles, subset draws) is defined here bit-for-bit so an
//! external tool can reproduce the same draws from the same seed:
//!
//! * `next_u64`: `state += 0x9E3779B97F4A7C15`, then the SplitMix64 finalizer.
//! * `next_f64`: `(next_u64() >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * `below(n)`: draw `x = next_u64()` until `x < 2^64 - (2^64 mod n)`,
//!   return `x mod n`.
//! * `shuffle`: Fisher-Yates from the back, `j = below(i + 1)` for
//!   `i = len-1 ..= 1`.
//! * `choose_positions(n, k)`: partial Fisher-Yates over `0..n`, for
//!   `i = 0 .. k`: `j = i + below(n - i)`, swap; the first `k` are sorted.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to turn stage names and passage ids into seed material.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Seed for a named stage of a run: `mix64(base ^ fnv1a64(tag))`.
pub fn stage_seed(base: u64, tag: &str) -> u64 {
    mix64(base ^ fnv1a64(tag.as_bytes()))
}

/// Seed for the `ordinal`-th passage of a batch.
pub fn passage_seed(base: u64, ordinal: u64) -> u64 {
    base ^ ordinal
}

/// Seed keyed by a passage identifier rather than its position.
pub fn keyed_seed(base: u64, key: &str) -> u64 {
    base ^ fnv1a64(key.as_bytes())
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

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // 2^64 mod n, computed without overflow.
        let rem = (u64::MAX % n + 1) % n;
        loop {
            let x = self.next_u64();
            if rem == 0 || x < u64::MAX - rem + 1 {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct positions from `0..n`, ascending.
    pub fn choose_positions(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }
}
